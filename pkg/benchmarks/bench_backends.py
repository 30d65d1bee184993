#!/usr/bin/env python3
"""Compare the compiled and pure-numpy kernel backends on training workloads.

The backend is fixed per process at import time, so this script re-executes
itself once per backend and prints a comparison table.

    python benchmarks/bench_backends.py [--repeats 3]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def workloads():
    from convimpact import data as d
    from convimpact import model as m
    from convimpact import training as tr

    spec = d.SyntheticSpec(n_conversations=300, min_len=8, max_len=16, embed_dim=64,
                           n_prototypes=6, seed=3)
    conversations, table, _ = d.generate_synthetic(spec)

    def train_ara():
        cfg = tr.TrainConfig(epochs=2, batch_size=32, seed=1, learning_rate=1e-3)
        tr.train("ara", conversations, [], table, cfg)

    def train_ara_o():
        cfg = tr.TrainConfig(epochs=1, batch_size=32, seed=1, learning_rate=1e-3)
        tr.train("ara-o", conversations[:60], [], table, cfg, hidden_dim=200)

    def train_ara_a():
        cfg = tr.TrainConfig(epochs=1, batch_size=32, seed=1, learning_rate=1e-3)
        tr.train("ara-a", conversations[:120], [], table, cfg, hidden_dim=200)

    def train_nara():
        cfg = tr.TrainConfig(epochs=1, batch_size=32, seed=1, learning_rate=1e-3)
        tr.train("nara", conversations[:60], [], table, cfg, hidden_dim=200)

    def score_all():
        params = m.initialize_params("ara-o", 64, 200, seed=0)
        for conv in conversations[:150]:
            m.forward(params, table.conversation_matrix(conv), conv.id)

    return {
        "train ara (2 epochs, 300 convs)": train_ara,
        "train ara-o (1 epoch, 60 convs)": train_ara_o,
        "train ara-a (1 epoch, 120 convs)": train_ara_a,
        "train nara (1 epoch, 60 convs)": train_nara,
        "score ara-o (150 convs)": score_all,
    }


def run_worker(repeats: int):
    import convimpact

    results = {"backend": convimpact.backend_name(), "timings": {}}
    for name, fn in workloads().items():
        fn()  # warm up caches and lazy imports
        best = min(timed(fn) for _ in range(repeats))
        results["timings"][name] = best
    print(json.dumps(results))


def timed(fn) -> float:
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        run_worker(args.repeats)
        return

    results = {}
    for backend in ("py", "c"):
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker",
             "--repeats", str(args.repeats)],
            env={**os.environ, "CONVIMPACT_KERNELS": backend},
            capture_output=True, text=True,
        )
        if proc.returncode != 0:
            print(f"backend {backend} failed:\n{proc.stderr}", file=sys.stderr)
            continue
        payload = json.loads(proc.stdout.strip().splitlines()[-1])
        if payload["backend"] != backend:
            print(f"warning: requested {backend}, got {payload['backend']} "
                  "(extension not built?)", file=sys.stderr)
        results[backend] = payload["timings"]

    if set(results) != {"py", "c"}:
        print("need both backends for a comparison", file=sys.stderr)
        sys.exit(1)

    width = max(len(k) for k in results["py"])
    print(f"{'workload':<{width}}  {'numpy (s)':>10}  {'compiled (s)':>12}  {'speedup':>8}")
    for name in results["py"]:
        py_t = results["py"][name]
        c_t = results["c"][name]
        print(f"{name:<{width}}  {py_t:>10.3f}  {c_t:>12.3f}  {py_t / c_t:>7.2f}x")


if __name__ == "__main__":
    main()

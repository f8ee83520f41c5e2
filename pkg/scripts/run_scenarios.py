"""Run the photo scenarios over several seeds and transports.

    python scripts/run_scenarios.py [--seeds 10] [--oracle]

Prints one row per (scenario, mode, seed) and the client's final solution.
"""
import argparse
import time

from creole.engine import BoundExceeded, SeededRandom
from creole.model import format_atom
from creole.runtime import dist_exhaustive_finals, elaborate, run_distributed
from creole.scenarios import adaptation, coordination, integration
from creole.transport import QueueTransport, TcpTransport, run_threaded

SCENARIOS = {
    "adaptation-picasa": lambda: adaptation("picasa"),
    "adaptation-flickr": lambda: adaptation("flickr"),
    "integration": integration,
    "coordination": coordination,
}


def client(res):
    return " ".join(sorted(format_atom(a) for a in res.config.solutions()["C-VM"]))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--oracle", action="store_true", help="also count finals with the exhaustive oracle")
    args = ap.parse_args(argv)
    modes = {
        "sim": lambda s, seed: run_distributed(s, SeededRandom(seed)),
        "queue": lambda s, seed: run_threaded(s, QueueTransport(reorder_seed=seed), seed),
        "tcp": lambda s, seed: run_threaded(s, TcpTransport(), seed),
    }
    print(f"{'scenario':20} {'mode':6} {'seed':>4} {'steps':>6} {'time':>7}  client")
    for name, build in SCENARIOS.items():
        for mode, run in modes.items():
            for seed in range(args.seeds):
                t0 = time.perf_counter()
                res = run(elaborate(build()), seed)
                dt = time.perf_counter() - t0
                print(f"{name:20} {mode:6} {seed:>4} {res.steps:>6} {dt:>6.3f}s  {client(res)}")
        if args.oracle:
            try:
                finals = dist_exhaustive_finals(elaborate(build()), max_states=50_000)
                print(f"{name:20} oracle: {len(finals)} final configuration(s)")
            except BoundExceeded as e:
                print(f"{name:20} oracle: {e}")


if __name__ == "__main__":
    main()

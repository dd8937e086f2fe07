"""Wall time of 4 chains on one thread against 4 worker processes."""
import argparse
import os

from stgp.experiments import speedup_benchmark


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--samples", type=int, default=1000)
    a = p.parse_args()
    print(f"usable CPUs: {len(os.sched_getaffinity(0))}")
    r = speedup_benchmark(a.threads, warmup=a.warmup, samples=a.samples)
    print(f"serial {r['serial']:.1f} s, {r['threads']} workers {r['parallel']:.1f} s, "
          f"ratio {r['ratio']:.2f} (target < 0.6)")


if __name__ == "__main__":
    main()

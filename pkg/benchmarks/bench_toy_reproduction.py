import argparse
import json
import time

import numpy as np

from clasp import ablation, evaluate_suite, make_toy_world, toy_config, train
from clasp.evaluation import Report
from clasp.training import ABLATIONS, pretrain


def _scores(report: Report) -> dict[str, float]:
    replace = report.categories.get("replace")
    return {
        "swap_itt_pp": report.categories["swap"].itt_pp,
        "replace_itt_pp": replace.itt_pp if replace else float("nan"),
        "winoground_group": report.winoground["group"],
        "text_r@1": report.retrieval["text_r@1"],
    }


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, nargs="*", default=[0, 1, 2, 3, 4])
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--rows", nargs="*", default=sorted(ABLATIONS))
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args()

    runs: dict[str, list[dict[str, float]]] = {}
    for seed in args.seeds:
        world = make_toy_world(seed=seed)
        base = toy_config(seed=seed, total_steps=args.steps, progress=False, log_every=0)
        warm = pretrain(world.corpus, base)
        runs.setdefault("warm_start", []).append(
            _scores(evaluate_suite(warm, world.suite)) | {"seconds": 0.0}
        )
        for row in args.rows:
            start = time.perf_counter()
            trained = train(world.corpus, ablation(row, base), init=warm)
            scores = _scores(evaluate_suite(trained.checkpoint.encoders, world.suite))
            runs.setdefault(row, []).append(scores | {"seconds": time.perf_counter() - start})

    results = {
        row: {metric: float(np.mean([run[metric] for run in per_seed])) for metric in per_seed[0]}
        for row, per_seed in runs.items()
    }
    if "C1" in runs and "C5" in runs:
        results["C5-C1"] = {
            metric: results["C5"][metric] - results["C1"][metric]
            for metric in ("swap_itt_pp", "text_r@1")
        }

    if args.json:
        print(json.dumps({"seeds": args.seeds, "mean": results}, sort_keys=True))
        return

    print(f"mean over seeds {args.seeds}")
    for row, stats in results.items():
        scores = " ".join(f"{k}={100 * v:.1f}" for k, v in stats.items() if k != "seconds")
        seconds = stats.get("seconds")
        print(f"{row}: {scores}" + (f" in {seconds:.1f}s" if seconds else ""))


if __name__ == "__main__":
    main()

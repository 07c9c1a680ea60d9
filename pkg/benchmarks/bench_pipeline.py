import argparse
import json
import time
from collections.abc import Callable

import numpy as np

from clasp import (
    EmbeddingBatch,
    GenerationConfig,
    build_batch,
    clic_total,
    make_toy_world,
    toy_config,
)
from clasp.gradcheck import run_suite
from clasp.training import clic_step, initialize_encoders


def _unit(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    rows = rng.normal(size=(m, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _build_case(n_scenes: int, batch: int, threads: int) -> tuple[str, Callable[[], None]]:
    world = make_toy_world(n_scenes=n_scenes, n_eval_scenes=1)
    cfg = GenerationConfig(threads=threads)
    rng = np.random.default_rng(0)

    def run() -> None:
        indices = [int(i) for i in rng.choice(len(world.corpus), size=batch, replace=False)]
        assert build_batch(world.corpus, indices, cfg, rng)

    return f"build_batch_t{threads}", run


def _loss_case(batch: int, dim: int) -> tuple[str, Callable[[], None]]:
    rng = np.random.default_rng(0)
    emb = EmbeddingBatch(
        _unit(rng, batch, dim),
        tuple(_unit(rng, batch, dim) for _ in range(4)),
        _unit(rng, batch, dim),
        temperature=10.0,
    )

    def run() -> None:
        clic_total(emb)

    return "clic_total", run


def _step_case(n_scenes: int, batch: int) -> tuple[str, Callable[[], None]]:
    world = make_toy_world(n_scenes=n_scenes, n_eval_scenes=1)
    cfg = toy_config(batch_size=batch, progress=False)
    encoders = initialize_encoders(world.corpus, cfg)
    rng = np.random.default_rng(0)

    def run() -> None:
        assert clic_step(encoders, world.corpus, cfg, rng) is not None

    return "clic_step", run


def _gradcheck_case() -> tuple[str, Callable[[], None]]:
    def run() -> None:
        assert run_suite(0, repeats=1).passed

    return "gradcheck_suite", run


def _run_case(run: Callable[[], None], rounds: int) -> list[float]:
    elapsed: list[float] = []
    for _ in range(rounds):
        start = time.perf_counter()
        run()
        elapsed.append(time.perf_counter() - start)
    return elapsed


def _summarize(samples: list[float]) -> dict[str, float]:
    ordered = sorted(samples)
    middle = ordered[len(ordered) // 2]
    return {
        "median_seconds": middle,
        "min_seconds": ordered[0],
        "max_seconds": ordered[-1],
    }


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--scenes", type=int, default=2000)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--dim", type=int, default=512)
    parser.add_argument("--rounds", type=int, default=5)
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args()

    cases = [
        _build_case(args.scenes, args.batch, threads=1),
        _build_case(args.scenes, args.batch, threads=4),
        _loss_case(args.batch, args.dim),
        _step_case(args.scenes, args.batch),
        _gradcheck_case(),
    ]
    results = {tag: _summarize(_run_case(run, args.rounds)) for tag, run in cases}
    if args.json:
        print(json.dumps(results, sort_keys=True))
        return

    for tag, stats in results.items():
        print(
            f"{tag}: median={stats['median_seconds']:.4f}s "
            f"min={stats['min_seconds']:.4f}s max={stats['max_seconds']:.4f}s"
        )


if __name__ == "__main__":
    main()

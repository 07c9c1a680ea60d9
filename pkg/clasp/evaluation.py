"""Compositionality and retrieval scoring over embeddings from any encoder pair.

Every comparison is strict: a tie never counts as a success.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np

from .errors import empty_suite, k_out_of_range, not_normalized, shape_mismatch

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from .encoders import EncoderPair

    type Vector = NDArray[np.float64]
    type Matrix = NDArray[np.float64]

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-9
TOT_RULE = "p1.p2 > p1.n and p1.p2 > p2.n"
WINOGROUND_RULE = "text: s(c0,i0)>s(c1,i0), s(c1,i1)>s(c0,i1); image: s(c0,i0)>s(c0,i1), s(c1,i1)>s(c1,i0)"
TIE_RULE = "strict inequalities, ties fail"


def _check_unit(*vectors: "Vector") -> None:
    for vector in vectors:
        deviation = abs(float(np.linalg.norm(vector)) - 1.0)
        if deviation > UNIT_TOLERANCE:
            raise not_normalized("Evaluation embedding", deviation)


@dataclass(frozen=True, slots=True)
class EvalQuadruple:
    image: "Vector"
    p1: "Vector"
    p2: "Vector"
    n: "Vector"

    def __post_init__(self) -> None:
        _check_unit(self.image, self.p1, self.p2, self.n)


@dataclass(frozen=True, slots=True)
class WinoGroundItem:
    c0: "Vector"
    c1: "Vector"
    i0: "Vector"
    i1: "Vector"

    def __post_init__(self) -> None:
        _check_unit(self.c0, self.c1, self.i0, self.i1)


class WinoVerdict(NamedTuple):
    text: bool
    image: bool
    group: bool


def sugarcrepe_itt(q: EvalQuadruple) -> bool:
    return bool(q.image @ q.p1 > q.image @ q.n)


def sugarcrepepp_itt(q: EvalQuadruple) -> bool:
    neg = q.image @ q.n
    return bool(q.image @ q.p1 > neg and q.image @ q.p2 > neg)


def sugarcrepepp_tot(q: EvalQuadruple) -> bool:
    """Both paraphrases must be closer to each other than either is to the negative."""
    pos = q.p1 @ q.p2
    return bool(pos > q.p1 @ q.n and pos > q.p2 @ q.n)


def winoground_scores(item: WinoGroundItem) -> WinoVerdict:
    s00 = item.c0 @ item.i0
    s01 = item.c0 @ item.i1
    s10 = item.c1 @ item.i0
    s11 = item.c1 @ item.i1
    text = bool(s00 > s10 and s11 > s01)
    image = bool(s00 > s01 and s11 > s10)
    return WinoVerdict(text=text, image=image, group=text and image)


def recall_at_k(
    sim: "Matrix", gold: "Sequence[int] | Sequence[Sequence[int]]", k: int
) -> float:
    """Fraction of rows with a gold column among the ``k`` best.

    Columns are ranked by descending score with ties broken by ascending column
    index. ``gold`` holds one column per row, or a collection of columns.
    """
    n_rows, n_cols = sim.shape
    if not 1 <= k <= n_cols:
        raise k_out_of_range(k, n_cols)
    if len(gold) != n_rows:
        raise shape_mismatch("Gold labels", (n_rows,), (len(gold),))
    # A stable sort on the negated scores keeps ties in column order.
    ranked = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    hits = 0
    for row, wanted in enumerate(gold):
        targets = {int(wanted)} if isinstance(wanted, (int, np.integer)) else set(wanted)
        hits += bool(targets.intersection(ranked[row].tolist()))
    return hits / n_rows


@dataclass(frozen=True, slots=True)
class Probe:
    """A held-out image with two paraphrases and one hard negative, as raw inputs."""

    category: str
    features: "Vector"
    p1: str
    p2: str
    n: str


@dataclass(frozen=True, slots=True)
class WinoProbe:
    c0: str
    c1: str
    i0: "Vector"
    i1: "Vector"


@dataclass(frozen=True, slots=True)
class RetrievalSet:
    """Images with their captions; ``gold[i]`` lists the captions of image ``i``."""

    features: "Matrix"
    captions: tuple[str, ...]
    gold: tuple[tuple[int, ...], ...]

    def image_gold(self) -> list[list[int]]:
        by_caption: list[list[int]] = [[] for _ in self.captions]
        for image, captions in enumerate(self.gold):
            for caption in captions:
                by_caption[caption].append(image)
        return by_caption


@dataclass(frozen=True, slots=True)
class EvalSuite:
    probes: tuple[Probe, ...]
    wino: tuple[WinoProbe, ...] = ()
    retrieval: RetrievalSet | None = None


@dataclass(frozen=True, slots=True)
class CategoryScore:
    count: int
    itt: float
    itt_pp: float
    tot: float


@dataclass(frozen=True, slots=True)
class Report:
    categories: dict[str, CategoryScore]
    averages: dict[str, dict[str, float]]
    winoground: dict[str, float] = field(default_factory=dict)
    retrieval: dict[str, float] = field(default_factory=dict)
    config_hash: str = ""
    seed: int | None = None
    flags: dict[str, str] = field(
        default_factory=lambda: {
            "tot_rule": TOT_RULE,
            "winoground_rule": WINOGROUND_RULE,
            "ties": TIE_RULE,
        }
    )

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "categories": {
                name: {
                    "count": score.count,
                    "itt": score.itt,
                    "itt_pp": score.itt_pp,
                    "tot": score.tot,
                }
                for name, score in sorted(self.categories.items())
            },
            "averages": self.averages,
            "winoground": self.winoground,
            "retrieval": self.retrieval,
            "flags": self.flags,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render_table(self) -> str:
        """Aligned plain-text table of every metric, as percentages."""
        rows: list[tuple[str, str, str, str, str]] = [
            ("category", "n", "SC ITT", "SC++ ITT", "SC++ TOT")
        ]
        for name, score in sorted(self.categories.items()):
            rows.append((
                name,
                str(score.count),
                f"{100 * score.itt:.1f}",
                f"{100 * score.itt_pp:.1f}",
                f"{100 * score.tot:.1f}",
            ))
        for weighting, metrics in sorted(self.averages.items()):
            rows.append((
                f"avg ({weighting})",
                "",
                f"{100 * metrics['itt']:.1f}",
                f"{100 * metrics['itt_pp']:.1f}",
                f"{100 * metrics['tot']:.1f}",
            ))
        widths = [max(len(row[col]) for row in rows) for col in range(5)]
        lines = [
            "  ".join(
                cell.ljust(width) if col == 0 else cell.rjust(width)
                for col, (cell, width) in enumerate(zip(row, widths, strict=True))
            ).rstrip()
            for row in rows
        ]
        extras = {f"winoground {k}": v for k, v in sorted(self.winoground.items())}
        extras |= {k: v for k, v in sorted(self.retrieval.items())}
        if extras:
            label_width = max(map(len, extras))
            lines.append("")
            lines.extend(
                f"{label.ljust(label_width)}  {100 * value:6.1f}"
                for label, value in extras.items()
            )
        return "\n".join(lines) + "\n"


def _averages(categories: dict[str, CategoryScore]) -> dict[str, dict[str, float]]:
    metrics = ("itt", "itt_pp", "tot")
    total = sum(score.count for score in categories.values())
    equal = {
        metric: sum(getattr(s, metric) for s in categories.values()) / len(categories)
        for metric in metrics
    }
    weighted = {
        metric: sum(getattr(s, metric) * s.count for s in categories.values()) / total
        for metric in metrics
    }
    return {"equal": equal, "size": weighted}


def score_quadruples(
    quadruples: "Sequence[tuple[str, EvalQuadruple]]",
) -> dict[str, CategoryScore]:
    """Per-category accuracies for ``(category, quadruple)`` pairs."""
    if not quadruples:
        raise empty_suite("quadruples")
    tallies: dict[str, list[int]] = {}
    for category, quad in quadruples:
        tally = tallies.setdefault(category, [0, 0, 0, 0])
        tally[0] += 1
        tally[1] += sugarcrepe_itt(quad)
        tally[2] += sugarcrepepp_itt(quad)
        tally[3] += sugarcrepepp_tot(quad)
    return {
        category: CategoryScore(
            count=count, itt=itt / count, itt_pp=itt_pp / count, tot=tot / count
        )
        for category, (count, itt, itt_pp, tot) in tallies.items()
    }


def evaluate_suite(
    encoders: "EncoderPair",
    suite: EvalSuite,
    *,
    ks: "Sequence[int]" = (1, 5),
    config_hash: str = "",
    seed: int | None = None,
) -> Report:
    """Encode every probe and aggregate all scorers into a `Report`."""
    if not suite.probes:
        raise empty_suite("probes")

    images = encoders.image.encode(np.stack([probe.features for probe in suite.probes]))
    texts = encoders.text.encode(
        [text for probe in suite.probes for text in (probe.p1, probe.p2, probe.n)]
    ).reshape(len(suite.probes), 3, -1)
    quadruples = [
        (probe.category, EvalQuadruple(images[i], texts[i, 0], texts[i, 1], texts[i, 2]))
        for i, probe in enumerate(suite.probes)
    ]
    categories = score_quadruples(quadruples)

    winoground: dict[str, float] = {}
    if suite.wino:
        captions = encoders.text.encode([t for w in suite.wino for t in (w.c0, w.c1)])
        pictures = encoders.image.encode(
            np.stack([f for w in suite.wino for f in (w.i0, w.i1)])
        )
        verdicts = [
            winoground_scores(
                WinoGroundItem(
                    captions[2 * i], captions[2 * i + 1], pictures[2 * i], pictures[2 * i + 1]
                )
            )
            for i in range(len(suite.wino))
        ]
        winoground = {
            name: sum(getattr(v, name) for v in verdicts) / len(verdicts)
            for name in WinoVerdict._fields
        }

    retrieval: dict[str, float] = {}
    if suite.retrieval is not None:
        sim = encoders.image.encode(suite.retrieval.features) @ encoders.text.encode(
            list(suite.retrieval.captions)
        ).T
        image_gold = suite.retrieval.image_gold()
        for k in ks:
            if k <= sim.shape[1]:
                retrieval[f"text_r@{k}"] = recall_at_k(sim, suite.retrieval.gold, k)
            if k <= sim.shape[0]:
                retrieval[f"image_r@{k}"] = recall_at_k(sim.T, image_gold, k)

    report = Report(
        categories=categories,
        averages=_averages(categories),
        winoground=winoground,
        retrieval=retrieval,
        config_hash=config_hash,
        seed=seed,
    )
    logger.info(
        "Evaluated %d probes: SC++ ITT %.3f (equal-weight)",
        len(suite.probes),
        report.averages["equal"]["itt_pp"],
    )
    return report

"""A synthetic world of two-object scenes with attribute bindings.

Each scene holds two ``(attribute, object)`` bindings. A scene's feature vector
is a bag-of-concepts block followed by a bound-pair block, so only the second
block tells which attribute belongs to which object.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .batching import Corpus
from .encoders import EncoderPair, ToyImageEncoder, ToyTextEncoder, build_vocab
from .evaluation import EvalSuite, Probe, RetrievalSet, WinoProbe
from .images import FeatureImage

if TYPE_CHECKING:
    from numpy.typing import NDArray

logger = logging.getLogger(__name__)

OBJECTS = (
    "ball", "cube", "cone", "cylinder", "ring", "star",
    "box", "disk", "pyramid", "tile", "kite", "vase",
)  # fmt: skip
ATTRIBUTES = (
    "red", "blue", "green", "yellow", "purple", "orange",
    "pink", "brown", "black", "white", "gray", "silver",
)  # fmt: skip

ORACLE_BIAS = 0.1

type Binding = tuple[int, int]
type Scene = tuple[Binding, Binding]


@dataclass(frozen=True, slots=True)
class ToyWorldConfig:
    n_objects: int = 8
    n_attributes: int = 8
    n_scenes: int = 2000
    noise_sigma: float = 0.05
    n_eval_scenes: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if not 2 <= self.n_objects <= len(OBJECTS):  # noqa: PLR2004
            raise ValueError(f"n_objects must lie in [2, {len(OBJECTS)}].")
        if not 2 <= self.n_attributes <= len(ATTRIBUTES):  # noqa: PLR2004
            raise ValueError(f"n_attributes must lie in [2, {len(ATTRIBUTES)}].")
        if self.n_scenes < 2 or self.n_eval_scenes < 1:  # noqa: PLR2004
            raise ValueError("A toy world needs at least 2 scenes and 1 eval scene.")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative.")

    @property
    def feature_dim(self) -> int:
        n_a, n_o = self.n_attributes, self.n_objects
        return n_a + n_o + n_a * n_o


@dataclass(frozen=True, slots=True)
class ToyWorld:
    config: ToyWorldConfig
    corpus: Corpus
    scenes: tuple[Scene, ...]
    suite: EvalSuite

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim


def _pair_text(binding: Binding) -> str:
    attribute, obj = binding
    return f"{ATTRIBUTES[attribute]} {OBJECTS[obj]}"


def clause_caption(scene: Scene) -> str:
    return f"the {_pair_text(scene[0])} and the {_pair_text(scene[1])}."


def scene_caption(scene: Scene) -> str:
    """Five sentences: the clause pair, two ``is`` details and two ``there is`` details."""
    (a1, o1), (a2, o2) = scene
    return " ".join((
        clause_caption(scene),
        f"the {OBJECTS[o1]} is {ATTRIBUTES[a1]}.",
        f"the {OBJECTS[o2]} is {ATTRIBUTES[a2]}.",
        f"there is a {_pair_text(scene[0])}.",
        f"there is a {_pair_text(scene[1])}.",
    ))


def scene_features(
    cfg: ToyWorldConfig, scene: Scene, rng: np.random.Generator | None = None
) -> "NDArray[np.float64]":
    n_a, n_o = cfg.n_attributes, cfg.n_objects
    features = np.zeros(cfg.feature_dim)
    for attribute, obj in scene:
        features[attribute] += 1.0
        features[n_a + obj] += 1.0
        features[n_a + n_o + attribute * n_o + obj] = 1.0
    if rng is not None and cfg.noise_sigma > 0:
        features += rng.normal(0.0, cfg.noise_sigma, size=features.shape)
    return features


def _draw_scene(cfg: ToyWorldConfig, rng: np.random.Generator) -> Scene:
    a1, a2 = (int(v) for v in rng.choice(cfg.n_attributes, size=2, replace=False))
    o1, o2 = (int(v) for v in rng.choice(cfg.n_objects, size=2, replace=False))
    return (a1, o1), (a2, o2)


def swapped_scene(scene: Scene) -> Scene:
    """The same concepts with the two attributes exchanged."""
    (a1, o1), (a2, o2) = scene
    return (a2, o1), (a1, o2)


def _eval_suite(cfg: ToyWorldConfig, rng: np.random.Generator) -> EvalSuite:
    probes: list[Probe] = []
    wino: list[WinoProbe] = []
    retrieval_features: list[NDArray[np.float64]] = []
    captions: list[str] = []
    # Replace probes need an attribute absent from the scene.
    replaces = cfg.n_attributes > 2  # noqa: PLR2004
    if not replaces:
        logger.warning(
            "With %d attributes no scene leaves one out; skipping replace probes",
            cfg.n_attributes,
        )
    for _ in range(cfg.n_eval_scenes):
        scene = _draw_scene(cfg, rng)
        (a1, o1), (a2, o2) = scene
        features = scene_features(cfg, scene, rng)
        p1 = clause_caption(scene)
        p2 = clause_caption((scene[1], scene[0]))
        probes.append(
            Probe("swap", features, p1, p2, clause_caption(swapped_scene(scene)))
        )
        if replaces:
            absent = [a for a in range(cfg.n_attributes) if a not in (a1, a2)]
            a3 = absent[int(rng.integers(len(absent)))]
            probes.append(
                Probe("replace", features, p1, p2, clause_caption(((a3, o1), (a2, o2))))
            )
        other = swapped_scene(scene)
        wino.append(
            WinoProbe(
                c0=p1,
                c1=clause_caption(other),
                i0=features,
                i1=scene_features(cfg, other, rng),
            )
        )
        retrieval_features.append(features)
        captions.append(p1)
    return EvalSuite(
        probes=tuple(probes),
        wino=tuple(wino),
        retrieval=RetrievalSet(
            features=np.stack(retrieval_features),
            captions=tuple(captions),
            gold=tuple((i,) for i in range(len(captions))),
        ),
    )


def make_toy_world(
    n_objects: int = 8,
    n_attributes: int = 8,
    n_scenes: int = 2000,
    noise_sigma: float = 0.05,
    seed: int = 0,
    *,
    n_eval_scenes: int = 200,
) -> ToyWorld:
    """Draw training scenes and a held-out evaluation suite from one seed."""
    cfg = ToyWorldConfig(
        n_objects=n_objects,
        n_attributes=n_attributes,
        n_scenes=n_scenes,
        noise_sigma=noise_sigma,
        n_eval_scenes=n_eval_scenes,
        seed=seed,
    )
    train_seq, eval_seq = np.random.SeedSequence(seed).spawn(2)
    train_rng = np.random.default_rng(train_seq)
    scenes = tuple(_draw_scene(cfg, train_rng) for _ in range(n_scenes))
    corpus = Corpus.from_records(
        (
            f"scene-{index:05d}",
            scene_caption(scene),
            FeatureImage(scene_features(cfg, scene, train_rng)),
            None,
        )
        for index, scene in enumerate(scenes)
    )
    suite = _eval_suite(cfg, np.random.default_rng(eval_seq))
    return ToyWorld(config=cfg, corpus=corpus, scenes=scenes, suite=suite)


def world_texts(world: ToyWorld) -> list[str]:
    """Every sentence of the training corpus, the text encoder's vocabulary source."""
    return [s for item in world.corpus.items for s in item.caption.sentences]


def oracle_encoders(world: ToyWorld, *, ngram: int = 2) -> EncoderPair:
    """Analytic encoders that embed each bound pair on its own axis.

    Text rows for ``"{attribute} {object}"`` bigrams and image rows of the
    bound-pair block map to the pair's axis; every other row carries a small
    weight on a shared axis so no embedding is zero.
    """
    cfg = world.config
    n_a, n_o = cfg.n_attributes, cfg.n_objects
    embed_dim = 1 + n_a * n_o
    suite_texts = [t for p in world.suite.probes for t in (p.p1, p.p2, p.n)]
    vocab = build_vocab([*world_texts(world), *suite_texts], ngram)

    text_weights = np.zeros((len(vocab), embed_dim))
    text_weights[:, 0] = ORACLE_BIAS
    for attribute in range(n_a):
        for obj in range(n_o):
            row = vocab.get(_pair_text((attribute, obj)))
            if row is not None:
                text_weights[row] = 0.0
                text_weights[row, 1 + attribute * n_o + obj] = 1.0

    image_weights = np.zeros((cfg.feature_dim, embed_dim))
    image_weights[: n_a + n_o, 0] = ORACLE_BIAS
    for pair in range(n_a * n_o):
        image_weights[n_a + n_o + pair, 1 + pair] = 1.0
    return EncoderPair(
        text=ToyTextEncoder(vocab, text_weights, ngram=ngram),
        image=ToyImageEncoder(image_weights),
    )

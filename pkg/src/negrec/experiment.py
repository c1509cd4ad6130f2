"""Desk-scale experiment setup shared by the pipeline script and acceptance tests.

A setup file is JSON with three sections::

    {"world": {...DeskWorld fields...},
     "sim": {...SimConfig overrides...},
     "train": {...TrainConfig fields common to every variant...},
     "variants": {"FEATURE_AND_LABEL": {...overrides...}, ...}}
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from negrec.catalog import Corpus, generate_corpus
from negrec.simenv import RandomPolicy, SimConfig, Trajectory, generate_logs
from negrec.train import TrainConfig, Variant

DEFAULT_SETUP = Path(__file__).resolve().parent / "desk.json"


@dataclass(frozen=True)
class DeskWorld:
    num_items: int = 1000
    num_clusters: int = 20
    num_creators: int = 100
    topic_dim: int = 8
    sigma: float = 0.25
    creator_weight: float = 0.0
    users: int = 500
    length: int = 200
    seed: int = 0

    def corpus(self) -> Corpus:
        return generate_corpus(
            self.num_items, self.num_clusters, self.num_creators, self.topic_dim, self.seed,
            sigma=self.sigma, creator_weight=self.creator_weight,
        )

    def logs(self, corpus: Corpus, sim: SimConfig = SimConfig(), workers: int = 1) -> list[Trajectory]:
        policy = RandomPolicy(len(corpus), sim.slate_sample_size)
        return generate_logs(self.users, self.length, policy, self.seed, corpus, sim, workers=workers)


@dataclass(frozen=True)
class DeskSetup:
    world: DeskWorld = DeskWorld()
    sim: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    variants: dict = field(default_factory=dict)

    def sim_config(self) -> SimConfig:
        return SimConfig.from_dict({**SimConfig().to_dict(), **self.sim})

    def train_config(self, variant, **overrides) -> TrainConfig:
        variant = Variant(variant)
        doc = {**self.train, **self.variants.get(variant.value, {}), **overrides, "variant": variant.value}
        return TrainConfig.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "world": asdict(self.world),
            "sim": dict(self.sim),
            "train": dict(self.train),
            "variants": dict(self.variants),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DeskSetup":
        known = {f.name for f in fields(DeskWorld)}
        world = doc.get("world", {})
        if set(world) - known:
            raise ValueError(f"unknown world keys: {sorted(set(world) - known)}")
        bad = set(doc.get("variants", {})) - {v.value for v in Variant}
        if bad:
            raise ValueError(f"unknown variants: {sorted(bad)}")
        return cls(
            DeskWorld(**world),
            dict(doc.get("sim", {})),
            dict(doc.get("train", {})),
            dict(doc.get("variants", {})),
        )

    @classmethod
    def load(cls, path=DEFAULT_SETUP) -> "DeskSetup":
        return cls.from_dict(json.loads(Path(path).read_text()))


class PipelineError(RuntimeError):
    pass


def run_pipeline(
    setup: DeskSetup,
    out_dir,
    sims: int = 2000,
    workers: int = 1,
    variants=tuple(v.value for v in Variant),
) -> Path:
    """Drive every stage through the CLI so each artifact gets a manifest.

    Returns the path of the summary CSV.
    """
    from negrec.cli import main as negrec

    def run(*argv):
        argv = [str(a) for a in argv]
        if negrec(argv) != 0:
            raise PipelineError(f"negrec {argv[0]} failed")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w = setup.world
    corpus, logs, sim = out / "corpus.json", out / "logs.jsonl", out / "sim.json"
    sim.write_text(json.dumps(setup.sim_config().to_dict(), indent=2, sort_keys=True))
    run("gen-corpus", "--items", w.num_items, "--clusters", w.num_clusters, "--creators", w.num_creators,
        "--topic-dim", w.topic_dim, "--seed", w.seed, "--sigma", w.sigma,
        "--creator-weight", w.creator_weight, "--out", corpus)
    run("gen-logs", "--corpus", corpus, "--users", w.users, "--length", w.length,
        "--seed", w.seed, "--sim-config", sim, "--workers", workers, "--out", logs)
    for variant in variants:
        cfg_path = out / "configs" / f"{variant}.json"
        cfg_path.parent.mkdir(parents=True, exist_ok=True)
        cfg_path.write_text(json.dumps(setup.train_config(variant).to_dict(), indent=2, sort_keys=True))
        ckpt = out / "models" / f"{variant}.ckpt.json"
        run("train", "--corpus", corpus, "--logs", logs, "--variant", variant, "--config", cfg_path,
            "--out", ckpt, "--report", out / "models" / f"{variant}.train.json")
        run("measure", "--corpus", corpus, "--ckpt", ckpt, "--sims", sims, "--seed", w.seed,
            "--sim-config", sim, "--workers", workers, "--out", out / "reports" / f"{variant}.json")
    summary = out / "summary.csv"
    run("report", "--in", out / "reports", "--out", summary)
    return summary

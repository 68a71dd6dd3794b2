"""Fine-tuning loop, evaluation, multi-seed experiments and the experiment matrices."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DivergedLoss
from .metrics import SLICE_ATTRIBUTES, Scores, aggregate, confusion_matrix, slice_by_metadata
from .model import FusionClassifier, Mode, ModelConfig, head_gradient_check, load_checkpoint, make_model, save_checkpoint, state_hash
from .text import NO_DESCRIPTION, AttributeSubset, Scenario, describe, scenario_descriptions, write_description_table

log = logging.getLogger(__name__)

ABLATION_SUBSETS = ("All", "Age-Sex-Loc", "Age-Sex-Dev", "Age-Loc-Dev", "Sex-Loc-Dev")
TEST_SCENARIOS = (Scenario.STANDARD, Scenario.BMI_INJECTED, Scenario.PARTIAL_METADATA, Scenario.NO_METADATA)
SCENARIO_TAGS = {
    Scenario.STANDARD: "",
    Scenario.BMI_INJECTED: "[BMI]",
    Scenario.PARTIAL_METADATA: "[Partial Metadata]",
    Scenario.NO_METADATA: "[No Metadata]",
}
GRAD_CHECK_TOLERANCE = 1e-4


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    epochs: int = 50
    batch_size: int = 8
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    eval_batch_size: int = 32

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs and batch_size must be >= 1 and lr > 0")
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "seeds", tuple(self.seeds))


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    subset: str = "All"
    scenario: str = Scenario.STANDARD.value

    @property
    def mode(self) -> Mode:
        return Mode(self.model.mode)

    @property
    def attribute_subset(self) -> AttributeSubset:
        return AttributeSubset.parse(self.subset)

    @property
    def label(self) -> str:
        if self.mode is Mode.AUDIO_ONLY:
            return "Audio-CLAP"
        name = "BTS" if self.attribute_subset.name == "All" else f"BTS ({self.attribute_subset.name})"
        return name + SCENARIO_TAGS[Scenario(self.scenario)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["betas"] = list(self.train.betas)
        d["train"]["seeds"] = list(self.train.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(
            model=ModelConfig(**d.get("model", {})),
            train=TrainConfig(**d.get("train", {})),
            subset=d.get("subset", "All"),
            scenario=d.get("scenario", Scenario.STANDARD.value),
        )

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]


@dataclass
class Samples:
    """Encoder-ready cycles: ids, metadata, labels and 8 s / 48 kHz waveforms."""

    ids: list[str]
    metas: list
    labels: np.ndarray
    waves: Sequence[np.ndarray]

    def __len__(self):
        return len(self.ids)

    def wave_batch(self, idx: Sequence[int], device=None) -> torch.Tensor:
        batch = torch.from_numpy(np.stack([np.asarray(self.waves[i], dtype=np.float32) for i in idx]))
        return batch if device is None else batch.to(device)


class CachedWaves:
    def __init__(self, entries, cache):
        self.entries = entries
        self.cache = cache

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.cache.get(self.entries[i]).samples


def samples_from_manifest(manifest, cache) -> Samples:
    entries = manifest.entries
    return Samples(
        ids=[e.sample_id for e in entries],
        metas=[e.meta for e in entries],
        labels=np.array([int(e.label) for e in entries], dtype=np.int64),
        waves=CachedWaves(entries, cache),
    )


def _batches(n: int, size: int, order: Optional[np.ndarray] = None):
    order = np.arange(n) if order is None else order
    for i in range(0, n, size):
        yield order[i : i + size]


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """Learning rate for ``epoch`` (0-based) under cosine decay to zero, no warmup."""
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


@dataclass
class FitResult:
    log: list[dict]
    grad_check_error: float


def fit(config: ExperimentConfig, samples: Samples, model: FusionClassifier, seed: int, log_path: Optional[Path] = None) -> FitResult:
    """Cross-entropy fine-tuning with Adam and per-epoch cosine decay.

    Returns the per-epoch log; the model is left at its final-epoch weights.
    """
    tc = config.train
    if model.mode is not config.mode:
        raise ValueError(f"model mode {model.mode.value} does not match config mode {config.mode.value}")
    texts = [describe(m, config.attribute_subset).text for m in samples.metas]
    device = _device(model)
    labels = torch.from_numpy(samples.labels).to(device)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=tc.lr, betas=tc.betas, eps=tc.eps)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda e: cosine_lr(1.0, e, tc.epochs))
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)

    model.eval()
    with torch.no_grad():
        probe = np.arange(min(tc.batch_size, len(samples)))
        z = _joint(model, [texts[i] for i in probe], samples.wave_batch(probe, device))
    if not torch.isfinite(z).all():
        raise DivergedLoss(f"seed {seed}: non-finite embeddings before the first step")
    grad_err = head_gradient_check(model.head, z.cpu(), labels[probe].cpu())
    if not grad_err <= GRAD_CHECK_TOLERANCE:
        raise RuntimeError(f"head gradient check failed: relative error {grad_err:.2e}")

    history = []
    sink = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(tc.epochs):
            model.train()
            lr = opt.param_groups[0]["lr"]
            total, count = 0.0, 0
            for idx in _batches(len(samples), tc.batch_size, rng.permutation(len(samples))):
                logits = model([texts[i] for i in idx], samples.wave_batch(idx, device))
                loss = F.cross_entropy(logits, labels[idx])
                if not torch.isfinite(loss):
                    raise DivergedLoss(f"seed {seed}: non-finite loss at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
                count += len(idx)
            sched.step()
            record = {"epoch": epoch, "loss": total / count, "lr": lr}
            history.append(record)
            log.info("seed %d epoch %d loss %.4f lr %.3g", seed, epoch, record["loss"], lr)
            if sink:
                sink.write(json.dumps(record) + "\n")
    finally:
        if sink:
            sink.close()
    model.eval()
    return FitResult(history, grad_err)


def _device(model: torch.nn.Module) -> torch.device:
    return next(model.parameters()).device


def _joint(model: FusionClassifier, texts, waves) -> torch.Tensor:
    z_a = model.embed_audio(waves)
    z_t = None if model.mode is Mode.AUDIO_ONLY else model.embed_text(texts)
    return model.joint(z_t, z_a)


@torch.no_grad()
def embed_audio_all(model: FusionClassifier, samples: Samples, batch_size: int = 32) -> torch.Tensor:
    model.eval()
    device = _device(model)
    return torch.cat([model.embed_audio(samples.wave_batch(idx, device)) for idx in _batches(len(samples), batch_size)])


@torch.no_grad()
def embed_text_all(model: FusionClassifier, texts: Sequence[str], batch_size: int = 32) -> torch.Tensor:
    model.eval()
    if texts and all(t == NO_DESCRIPTION for t in texts):
        # Constant stream: one forward pass, broadcast.
        return model.embed_text([NO_DESCRIPTION]).expand(len(texts), -1)
    return torch.cat([model.embed_text(list(texts[i : i + batch_size])) for i in range(0, len(texts), batch_size)])


@dataclass
class Evaluation:
    confusion: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    texts: list[str]
    audio_embeddings: torch.Tensor

    @property
    def scores(self) -> Scores:
        return Scores.from_cm(self.confusion)


@torch.no_grad()
def evaluate(
    model: FusionClassifier,
    samples: Samples,
    subset: AttributeSubset,
    scenario: Scenario | str = Scenario.STANDARD,
    seed: int = 0,
    audio_embeddings: Optional[torch.Tensor] = None,
    batch_size: int = 32,
) -> Evaluation:
    """Predict every test cycle; the scenario only ever touches the text stream."""
    model.eval()
    z_a = embed_audio_all(model, samples, batch_size) if audio_embeddings is None else audio_embeddings
    descs = scenario_descriptions(samples.metas, subset, scenario, seed, missing_bmi="keep")
    texts = [d.text for d in descs]
    z_t = None if model.mode is Mode.AUDIO_ONLY else embed_text_all(model, texts, batch_size)
    logits = model.logits(model.joint(z_t, z_a))
    y_pred = torch.argmax(logits, dim=-1).cpu().numpy()
    cm = confusion_matrix(samples.labels, y_pred)
    return Evaluation(cm, samples.labels.copy(), y_pred, texts, z_a)


# -- persisted reports ---------------------------------------------------------------------


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _seed_result(seed: int, ev: Evaluation) -> dict:
    s = ev.scores
    return {
        "seed": seed,
        "sp": s.sp,
        "se": s.se,
        "score": s.score,
        "confusion": ev.confusion.tolist(),
        "predictions": [int(p) for p in ev.y_pred],
    }


def build_report(config: ExperimentConfig, seed_results: list[dict], samples: Samples, kind: str = "experiment") -> dict:
    per_seed = [Scores(r["sp"], r["se"], r["score"]) for r in seed_results]
    agg = aggregate(per_seed)
    slices = {}
    for attr in SLICE_ATTRIBUTES:
        per_value: dict[str, dict] = {}
        for r in seed_results:
            for row in slice_by_metadata(samples.labels, r["predictions"], samples.metas, attr):
                slot = per_value.setdefault(row.value, {"n": row.n, "ratio": row.ratio, "sp": [], "se": [], "score": []})
                for k in ("sp", "se", "score"):
                    v = getattr(row, k)
                    if v is not None:
                        slot[k].append(v)
        slices[attr] = [
            {
                "value": value,
                "n": slot["n"],
                "ratio": slot["ratio"],
                "absent": slot["n"] == 0,
                **{k: (float(np.mean(slot[k])) if slot[k] else None) for k in ("sp", "se", "score")},
            }
            for value, slot in per_value.items()
        ]
    return {
        "label": config.label,
        "kind": kind,
        "mode": config.mode.value,
        "subset": config.attribute_subset.name,
        "scenario": config.scenario,
        "config_hash": config.hash,
        "config": config.to_dict(),
        "n_test": len(samples),
        "n_without_bmi": sum(getattr(m, "bmi", None) is None for m in samples.metas),
        "per_seed": [{k: r[k] for k in ("seed", "sp", "se", "score", "confusion")} for r in seed_results],
        "aggregate": {k: asdict(v) for k, v in agg.items()},
        "slices": slices,
    }


def run_experiment(
    config: ExperimentConfig,
    train: Samples,
    test: Samples,
    out_root: str | Path,
    resume: bool = True,
    save_checkpoints: bool = True,
    device: str = "cpu",
) -> dict:
    """Train and evaluate once per seed, persisting everything under ``out_root/<config hash>/``."""
    run_dir = Path(out_root) / config.hash
    report_path = run_dir / "report.json"
    if resume and report_path.is_file():
        log.info("run %s already complete, nothing to do", run_dir)
        return json.loads(report_path.read_text())
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

    results = []
    for seed in config.train.seeds:
        seed_dir = run_dir / str(seed)
        result_path = seed_dir / "result.json"
        if resume and result_path.is_file():
            results.append(json.loads(result_path.read_text()))
            continue
        seed_dir.mkdir(exist_ok=True)
        model = make_model(config.model, seed=seed).to(device)
        fit(config, train, model, seed, log_path=seed_dir / "train_log.jsonl")
        if save_checkpoints:
            save_checkpoint(model, seed_dir / "checkpoint.pt", config.model, seed, experiment=config.to_dict())
        ev = evaluate(model, test, config.attribute_subset, config.scenario, seed, batch_size=config.train.eval_batch_size)
        _dump(seed_dir / "confusion.json", ev.confusion.tolist())
        result = _seed_result(seed, ev)
        _dump(result_path, result)
        results.append(result)

    report = build_report(config, results, test)
    _dump(report_path, report)
    return report


def ablation_configs(base: ExperimentConfig) -> list[ExperimentConfig]:
    fused = replace(base.model, mode=Mode.FUSED.value)
    configs = [replace(base, model=fused, subset=s, scenario=Scenario.STANDARD.value) for s in ABLATION_SUBSETS]
    audio_only = replace(base.model, mode=Mode.AUDIO_ONLY.value)
    configs.append(replace(base, model=audio_only, subset="All", scenario=Scenario.STANDARD.value))
    return configs


def run_ablation_matrix(base: ExperimentConfig, train: Samples, test: Samples, out_root: str | Path, **kw) -> list[dict]:
    """Full metadata, every leave-one-attribute-out subset, and the audio-only baseline."""
    return [run_experiment(c, train, test, out_root, **kw) for c in ablation_configs(base)]


def run_scenario_matrix(
    run_dir: str | Path, test: Samples, scenarios: Sequence[Scenario] = TEST_SCENARIOS, device: str = "cpu"
) -> list[dict]:
    """Re-evaluate a trained full-metadata run under each test-time scenario.

    Weights and audio embeddings are shared across scenarios and verified
    unchanged by hash after all scenario evaluations of a seed.
    """
    run_dir = Path(run_dir)
    config = ExperimentConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    if config.mode is not Mode.FUSED and any(Scenario(s) is not Scenario.STANDARD for s in scenarios):
        raise ValueError("metadata scenarios need a trained fused (text + audio) run")
    per_scenario: dict[Scenario, list[dict]] = {Scenario(s): [] for s in scenarios}
    for seed in config.train.seeds:
        model, _ = load_checkpoint(run_dir / str(seed) / "checkpoint.pt", config.model)
        model.to(device)
        before = state_hash(model)
        z_a = embed_audio_all(model, test, config.train.eval_batch_size)
        audio_digest = hashlib.sha256(z_a.cpu().numpy().tobytes()).hexdigest()
        for sc in per_scenario:
            ev = evaluate(model, test, config.attribute_subset, sc, seed, audio_embeddings=z_a, batch_size=config.train.eval_batch_size)
            per_scenario[sc].append(_seed_result(seed, ev))
            if sc is Scenario.PARTIAL_METADATA:
                write_description_table(
                    run_dir / str(seed) / "partial_metadata_descriptions.jsonl",
                    test.ids,
                    scenario_descriptions(test.metas, config.attribute_subset, sc, seed),
                    seed,
                )
        if state_hash(model) != before or hashlib.sha256(z_a.cpu().numpy().tobytes()).hexdigest() != audio_digest:
            raise RuntimeError("scenario evaluation modified model weights or audio embeddings")

    reports = []
    for sc, results in per_scenario.items():
        sc_config = replace(config, scenario=sc.value)
        report = build_report(sc_config, results, test, kind="scenario")
        report["source_run"] = config.hash
        _dump(run_dir / f"scenario_{sc.value}.json", report)
        reports.append(report)
    return reports


def evaluate_run(run_dir: str | Path, test: Samples, scenario: Scenario | str = Scenario.STANDARD, device: str = "cpu") -> dict:
    """Evaluate the stored checkpoints of a run under one scenario."""
    return run_scenario_matrix(run_dir, test, [Scenario(scenario)], device)[0]

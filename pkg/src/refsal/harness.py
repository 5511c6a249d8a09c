"""Dataset ingestion and end-to-end orchestration.

Datasets are JSON-lines files of evaluation records; proposal and image
paths inside a record resolve relative to the dataset file. Running the
pipeline is deterministic: records are processed in sample-id order and
all outputs (prediction RLEs, reports, heatmap dumps, trace images) are
byte-stable across runs.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backend import Backend, SyntheticBackend
from .errors import ConfigError, InputError, RefsalError, ShapeError
from .heatmap import argmax_coords, save_tensor_dump
from .metrics import aggregate_metrics
from .parsing import parse
from .protocol import DEFAULT_TIMEOUT, BridgeClient
from .refinement import RefinementConfig, RefinementState, run_refinement
from .render import save_heatmap_png16
from .selection import SelectionResult, decode_rle, encode_rle, load_proposals, select_mask


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    width: int
    height: int
    image_ref: str
    expression: str
    proposals_path: str | None
    gt: np.ndarray
    image_path: str | None = None
    split_tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineConfig:
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    kappa: int = 12
    connectivity: int = 4
    tie_tol: float = 1e-9
    workers: int = 1
    trace: bool = False

    def __post_init__(self):
        if self.kappa < 1:
            raise ConfigError(f"kappa must be >= 1, got {self.kappa}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.tie_tol < 0:
            raise ConfigError(f"tie tolerance must be >= 0, got {self.tie_tol}")


def load_dataset(path) -> list[EvalRecord]:
    """Read a JSON-lines dataset; one record per line."""
    base = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            records.append(_record_from_dict(obj, base, f"{path}:{lineno}"))
    if not records:
        raise InputError(f"dataset {path} holds no records")
    ids = [r.sample_id for r in records]
    if len(set(ids)) != len(ids):
        raise InputError(f"dataset {path} has duplicate sample ids")
    return records


def _record_from_dict(obj: dict, base: Path, where: str) -> EvalRecord:
    try:
        image = obj["image"]
        width, height = int(image["width"]), int(image["height"])
        gt = decode_rle(obj["gt"])
        proposals = obj.get("proposals")
        image_path = image.get("path")
        record = EvalRecord(
            sample_id=str(obj["sample_id"]),
            width=width,
            height=height,
            image_ref=str(image.get("id", obj["sample_id"])),
            expression=str(obj["expression"]),
            proposals_path=str(base / proposals) if proposals else None,
            gt=gt,
            image_path=str(base / image_path) if image_path else None,
            split_tags=tuple(obj.get("split_tags", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{where}: malformed record: {exc}") from exc
    if record.gt.shape != (height, width):
        raise ShapeError(
            f"{where}: gt mask is {record.gt.shape}, image is {height}x{width}"
        )
    return record


def make_backend_factory(spec: str, timeout: float = DEFAULT_TIMEOUT):
    """Build a per-worker backend factory from a CLI-style spec string.

    Specs: synth:SCENES.json, bridge:HOST:PORT, bridge:stdio.
    """
    if spec.startswith("synth:"):
        backend = SyntheticBackend.from_file(spec[len("synth:"):])
        return lambda: backend
    if spec == "bridge:stdio":
        client = BridgeClient.over_stdio()
        return lambda: client
    if spec.startswith("bridge:"):
        rest = spec[len("bridge:"):]
        host, sep, port = rest.rpartition(":")
        if not sep or not port.isdigit():
            raise ConfigError(f"bridge spec must be bridge:HOST:PORT, got {spec!r}")
        return lambda: BridgeClient.connect(host, int(port), timeout=timeout)
    raise ConfigError(f"unknown backend spec {spec!r}")


@dataclass
class SampleOutcome:
    record: EvalRecord
    state: RefinementState
    selection: SelectionResult
    heat: np.ndarray
    mask: np.ndarray


def process_sample(record: EvalRecord, cfg: PipelineConfig, backend: Backend, lexicon=None) -> SampleOutcome:
    """Parse, refine, and select for one record."""
    if record.proposals_path is None:
        raise InputError(f"record {record.sample_id} has no proposal file")
    parsed = parse(record.expression, lexicon)
    state = run_refinement(backend, parsed, record.image_ref, cfg.refinement)
    if state.image_size != (record.width, record.height):
        raise ShapeError(
            f"backend image size {state.image_size} does not match record "
            f"{(record.width, record.height)}"
        )
    heat = state.image_heatmap()
    peaks = argmax_coords(heat, cfg.tie_tol)
    proposals = load_proposals(record.proposals_path, (record.height, record.width))
    selection = select_mask(proposals, peaks, heat, cfg.kappa, cfg.connectivity)
    chosen = next(p.mask for p in proposals if p.id == selection.selected_id)
    return SampleOutcome(record=record, state=state, selection=selection, heat=heat, mask=chosen)


def run_pipeline(
    records: list[EvalRecord],
    cfg: PipelineConfig,
    backend_factory,
    out_dir=None,
    lexicon=None,
):
    """Process every record; failures are isolated per sample.

    Returns (predictions, report, failures) where predictions maps sample id
    to the selected mask and failures maps sample id to the error message.
    """
    ordered = sorted(records, key=lambda r: r.sample_id)
    outcomes: dict[str, SampleOutcome] = {}
    failures: dict[str, str] = {}
    local = threading.local()

    def backend_for_worker() -> Backend:
        if not hasattr(local, "backend"):
            local.backend = backend_factory()
        return local.backend

    def work(record: EvalRecord):
        try:
            return record.sample_id, process_sample(record, cfg, backend_for_worker(), lexicon), None
        except (RefsalError, OSError) as exc:
            return record.sample_id, None, f"{type(exc).__name__}: {exc}"

    if cfg.workers == 1:
        results = [work(r) for r in ordered]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, ordered))

    for sample_id, outcome, error in results:
        if error is None:
            outcomes[sample_id] = outcome
        else:
            failures[sample_id] = error

    predictions = {sid: oc.mask for sid, oc in outcomes.items()}
    report = aggregate_metrics(ordered, predictions, lexicon)
    if out_dir is not None:
        _write_outputs(Path(out_dir), ordered, outcomes, failures, report, cfg)
    return predictions, report, failures


def _write_outputs(out_dir, records, outcomes, failures, report, cfg: PipelineConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = {}
    for sid in sorted(outcomes):
        oc = outcomes[sid]
        samples[sid] = {
            "selected_id": oc.selection.selected_id,
            "relaxation": oc.selection.relaxation,
            "scores": {str(k): oc.selection.scores[k] for k in sorted(oc.selection.scores)},
            "rle": encode_rle(oc.mask),
        }
    _write_json(out_dir / "predictions.json", {"samples": samples})
    _write_json(
        out_dir / "report.json",
        {
            "metrics": report.to_dict(),
            "failures": {k: failures[k] for k in sorted(failures)},
            "config": {
                "blend": cfg.refinement.blend,
                "drop_threshold": cfg.refinement.drop_threshold,
                "max_iterations": cfg.refinement.max_iterations,
                "mask_mode": cfg.refinement.mask_mode,
                "kappa": cfg.kappa,
                "connectivity": cfg.connectivity,
            },
        },
    )
    heat_dir = out_dir / "heatmaps"
    heat_dir.mkdir(exist_ok=True)
    for sid in sorted(outcomes):
        save_tensor_dump(heat_dir / f"{sid}.irpe", outcomes[sid].heat[None, :, :])
    if cfg.trace:
        trace_dir = out_dir / "trace"
        for sid in sorted(outcomes):
            sample_dir = trace_dir / sid
            sample_dir.mkdir(parents=True, exist_ok=True)
            state = outcomes[sid].state
            for i, rec in enumerate(state.trace, start=1):
                # raw saliency values are tiny; stretch each map for inspection
                span = rec.heatmap.max() - rec.heatmap.min()
                stretched = (
                    (rec.heatmap - rec.heatmap.min()) / span
                    if span > 0
                    else np.zeros_like(rec.heatmap)
                )
                save_heatmap_png16(stretched, sample_dir / f"iter{i}_current.png")
                save_heatmap_png16(
                    rec.drop_mask.astype(np.float64), sample_dir / f"iter{i}_keep_mask.png"
                )
            save_heatmap_png16(state.refined, sample_dir / "refined.png")


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(obj, fp, indent=2, sort_keys=True)
        fp.write("\n")


def load_predictions(path) -> dict[str, np.ndarray]:
    """Read a predictions file back into per-sample masks."""
    with open(path, encoding="utf-8") as fp:
        data = json.load(fp)
    try:
        return {sid: decode_rle(entry["rle"]) for sid, entry in data["samples"].items()}
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed predictions file {path}: {exc}") from exc

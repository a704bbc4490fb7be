"""HTTP session service for the human-in-the-loop retrieval workflow.

Exposes dataset upload, session creation (runs the two-stage selection
synchronously), annotation intake, asynchronous fine-tune jobs and ranked
retrieval. Sessions are durable: every session is one JSON file under the
data directory and survives restarts byte-for-byte. Session states move only
along created -> awaiting_annotations -> finetuning -> ready, with failed
reachable from finetuning.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from collections import defaultdict
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from . import __version__
from .dataset import Dataset, load_dataset, save_dataset
from .encoder import (
    EncoderParams,
    encode_gaf,
    load_params,
    params_from_json_dict,
    params_to_json_dict,
)
from .errors import GroupActError
from .evaluation import retrieve_topk_scored
from .finetune import Annotation, FinetuneConfig, finetune, merge_annotations
from .selection import (
    SelectionConfig,
    coreset_select,
    format_selection_report,
    query_aware_select,
    selection_report_rows,
)

STATES = ("created", "awaiting_annotations", "finetuning", "ready", "failed")


def _error(status: int, code: str, message: str, **extra: Any) -> HTTPException:
    return HTTPException(status_code=status, detail={"code": code, "message": message, **extra})


class DatasetUpload(BaseModel):
    id: str | None = None
    content: str | None = None
    path: str | None = None
    params_content: dict | None = None
    params_path: str | None = None


class SessionCreate(BaseModel):
    dataset_id: str
    query_ids: list[str]
    selection: dict = Field(default_factory=dict)
    seed: int = 0


class AnnotationIn(BaseModel):
    video_id: str
    label: str
    annotator: str | None = None


class AnnotationsSubmit(BaseModel):
    annotations: list[AnnotationIn]


class FinetuneStart(BaseModel):
    config: dict = Field(default_factory=dict)


class ServiceStore:
    """File-backed stores plus in-memory caches and per-session locks."""

    def __init__(self, data_dir: str | Path) -> None:
        self.root = Path(data_dir)
        for sub in ("datasets", "params", "sessions"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._datasets: dict[str, Dataset] = {}
        self._params: dict[str, EncoderParams] = {}
        self._pool_cache: dict[str, tuple[list[str], np.ndarray]] = {}
        self._fine_pool_cache: dict[str, tuple[list[str], np.ndarray]] = {}
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._registry_lock = threading.Lock()
        self.jobs: dict[str, dict] = {}
        self.running_jobs: dict[str, str] = {}  # session id -> job id

    # -- datasets -----------------------------------------------------------

    def dataset_path(self, dataset_id: str) -> Path:
        return self.root / "datasets" / f"{dataset_id}.jsonl"

    def params_path(self, dataset_id: str) -> Path:
        return self.root / "params" / f"{dataset_id}.json"

    def register_dataset(self, dataset: Dataset, params: EncoderParams,
                         dataset_id: str | None = None) -> str:
        dataset_id = dataset_id or dataset.id
        with self._registry_lock:
            save_dataset(dataset, self.dataset_path(dataset_id))
            self.params_path(dataset_id).write_text(
                json.dumps(params_to_json_dict(params)) + "\n"
            )
            self._datasets[dataset_id] = dataset
            self._params[dataset_id] = params
            self._pool_cache.pop(dataset_id, None)
        return dataset_id

    def dataset_ids(self) -> list[str]:
        ids = set(self._datasets)
        ids.update(p.stem for p in (self.root / "datasets").glob("*.jsonl"))
        return sorted(ids)

    def get_dataset(self, dataset_id: str) -> Dataset:
        if dataset_id not in self._datasets:
            path = self.dataset_path(dataset_id)
            if not path.exists():
                raise _error(404, "dataset-not-found", f"unknown dataset {dataset_id!r}")
            self._datasets[dataset_id] = load_dataset(path)
        return self._datasets[dataset_id]

    def get_params(self, dataset_id: str) -> EncoderParams:
        if dataset_id not in self._params:
            path = self.params_path(dataset_id)
            if not path.exists():
                raise _error(404, "params-not-found",
                             f"no encoder parameters registered for dataset {dataset_id!r}")
            self._params[dataset_id] = load_params(path)
        return self._params[dataset_id]

    def pool_embeddings(self, dataset_id: str) -> tuple[list[str], np.ndarray]:
        if dataset_id not in self._pool_cache:
            dataset = self.get_dataset(dataset_id)
            params = self.get_params(dataset_id)
            train = dataset.train_videos()
            ids = [v.id for v in train]
            matrix = np.stack([encode_gaf(v, params) for v in train])
            self._pool_cache[dataset_id] = (ids, matrix)
        return self._pool_cache[dataset_id]

    def fine_pool_embeddings(self, session: dict) -> tuple[list[str], np.ndarray]:
        sid = session["id"]
        if sid not in self._fine_pool_cache:
            dataset = self.get_dataset(session["dataset_id"])
            params = params_from_json_dict(session["params_finetuned"])
            train = dataset.train_videos()
            ids = [v.id for v in train]
            matrix = np.stack([encode_gaf(v, params) for v in train])
            self._fine_pool_cache[sid] = (ids, matrix)
        return self._fine_pool_cache[sid]

    # -- sessions -----------------------------------------------------------

    def session_path(self, session_id: str) -> Path:
        return self.root / "sessions" / f"{session_id}.json"

    def session_lock(self, session_id: str) -> threading.Lock:
        return self._locks[session_id]

    def session_ids(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "sessions").glob("*.json"))

    def load_session(self, session_id: str) -> dict:
        path = self.session_path(session_id)
        if not path.exists():
            raise _error(404, "session-not-found", f"unknown session {session_id!r}")
        session = json.loads(path.read_text())
        if (
            session["state"] == "finetuning"
            and self.running_jobs.get(session_id) is None
        ):
            # A restart orphaned this job; finetuning cannot silently resume.
            session["state"] = "failed"
            session["error"] = "fine-tune job interrupted (service restarted)"
            self.save_session(session)
        return session

    def save_session(self, session: dict) -> None:
        path = self.session_path(session["id"])
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(session, sort_keys=True) + "\n")
        os.replace(tmp, path)


def _config_from_dict(cls, payload: dict, what: str):
    try:
        return cls(**payload)
    except TypeError as exc:
        raise _error(422, f"invalid-{what}", str(exc))
    except GroupActError as exc:
        raise _error(422, f"invalid-{what}", str(exc))


def session_view(session: dict) -> dict:
    """Session without the bulky fine-tuned parameter blob."""
    view = {k: v for k, v in session.items() if k != "params_finetuned"}
    view["has_finetuned_params"] = session.get("params_finetuned") is not None
    return view


def create_app(data_dir: str | Path) -> FastAPI:
    app = FastAPI(title="groupact", version=__version__)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = ServiceStore(data_dir)
    app.state.store = store

    # -- datasets -----------------------------------------------------------

    @app.post("/datasets")
    def upload_dataset(body: DatasetUpload):
        if (body.content is None) == (body.path is None):
            raise _error(422, "invalid-dataset", "provide exactly one of content or path",
                         field="content")
        try:
            if body.path is not None:
                dataset = load_dataset(body.path)
            else:
                tmp = store.root / f".upload-{uuid.uuid4().hex}.jsonl"
                tmp.write_text(body.content)
                try:
                    dataset = load_dataset(tmp)
                finally:
                    tmp.unlink()
        except FileNotFoundError as exc:
            raise _error(422, "invalid-dataset", str(exc), field="path")
        except GroupActError as exc:
            raise _error(422, "invalid-dataset", str(exc), field="content")

        if body.params_content is not None:
            try:
                params = params_from_json_dict(body.params_content)
            except GroupActError as exc:
                raise _error(422, "invalid-params", str(exc), field="params_content")
        elif body.params_path is not None:
            try:
                params = load_params(body.params_path)
            except (FileNotFoundError, GroupActError) as exc:
                raise _error(422, "invalid-params", str(exc), field="params_path")
        else:
            raise _error(422, "invalid-params",
                         "encoder parameters required (params_content or params_path): "
                         "pre-train with the CLI and upload the result",
                         field="params_content")
        if params.feature_dim != dataset.feature_dim:
            raise _error(422, "invalid-params",
                         f"params C={params.feature_dim} does not match dataset "
                         f"C={dataset.feature_dim}", field="params_content")
        dataset_id = store.register_dataset(dataset, params, body.id)
        return dataset_summary(dataset_id)

    def dataset_summary(dataset_id: str) -> dict:
        dataset = store.get_dataset(dataset_id)
        return {
            "id": dataset_id,
            "feature_dim": dataset.feature_dim,
            "video_count": len(dataset.videos),
            "classes": [{"name": n, "count": c} for n, c in dataset.class_catalog],
            "videos": [
                {
                    "id": v.id,
                    "split": dataset.split[v.id],
                    "class": v.class_label,
                    "frames": v.frames,
                    "persons": v.persons,
                }
                for v in dataset.videos
            ],
        }

    @app.get("/datasets")
    def list_datasets():
        return {"datasets": store.dataset_ids()}

    @app.get("/datasets/{dataset_id}")
    def get_dataset(dataset_id: str):
        return dataset_summary(dataset_id)

    # -- videos -------------------------------------------------------------

    @app.get("/videos/{video_id}/schematic")
    def video_schematic(video_id: str, dataset_id: str | None = Query(default=None)):
        candidates = [dataset_id] if dataset_id else store.dataset_ids()
        for did in candidates:
            dataset = store.get_dataset(did)
            index = dataset.index
            if video_id in index:
                v = index[video_id]
                return {
                    "id": v.id,
                    "dataset_id": did,
                    "class": v.class_label,
                    "split": dataset.split[v.id],
                    "frames": v.frames,
                    "persons": v.persons,
                    "positions": v.positions.tolist(),
                }
        raise _error(404, "video-not-found", f"unknown video {video_id!r}")

    # -- sessions -----------------------------------------------------------

    @app.post("/sessions")
    def create_session(body: SessionCreate):
        dataset = store.get_dataset(body.dataset_id)
        index = dataset.index
        for vid in body.query_ids:
            if vid not in index:
                raise _error(404, "video-not-found",
                             f"query video {vid!r} not in dataset {body.dataset_id!r}",
                             field="query_ids")
        if not body.query_ids:
            raise _error(422, "invalid-session", "query_ids must be non-empty",
                         field="query_ids")
        cfg = _config_from_dict(SelectionConfig, body.selection, "selection-config")
        params = store.get_params(body.dataset_id)
        pool_ids, pool_gafs = store.pool_embeddings(body.dataset_id)
        queries = [index[vid] for vid in body.query_ids]
        for q in queries:
            if cfg.n_masked >= q.persons:
                raise _error(422, "invalid-selection-config",
                             f"n_masked={cfg.n_masked} must be below query person "
                             f"count {q.persons}", field="n_masked")
        rng = np.random.default_rng(body.seed)
        try:
            extended = query_aware_select(queries, pool_ids, pool_gafs, params, cfg, rng)
            pool_index = {vid: i for i, vid in enumerate(pool_ids)}
            ext_gafs = np.stack([pool_gafs[pool_index[vid]] for vid in extended.ids])
            selected = coreset_select(extended.ids, ext_gafs, cfg.n_select,
                                      metric=cfg.coreset_metric, rng=rng)
        except GroupActError as exc:
            raise _error(422, "selection-failed", str(exc))

        session = {
            "id": f"s-{uuid.uuid4().hex[:12]}",
            "dataset_id": body.dataset_id,
            "seed": body.seed,
            "state": "awaiting_annotations",
            "query_ids": list(body.query_ids),
            "selection_config": asdict(cfg),
            "extended_ids": extended.ids,
            "selected_ids": selected,
            "selection_rows": selection_report_rows(extended, selected),
            "annotations": [],
            "finetune": None,
            "loss_report": None,
            "params_finetuned": None,
            "error": None,
        }
        store.save_session(session)
        return session_view(session)

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": store.session_ids()}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return session_view(store.load_session(session_id))

    @app.get("/sessions/{session_id}/selection")
    def get_selection(session_id: str, format: str = Query(default="json")):
        session = store.load_session(session_id)
        rows = session["selection_rows"]
        if format == "csv":
            return PlainTextResponse(format_selection_report(rows))
        return {"session_id": session_id, "selected_ids": session["selected_ids"],
                "rows": rows}

    @app.post("/sessions/{session_id}/annotations")
    def submit_annotations(session_id: str, body: AnnotationsSubmit):
        with store.session_lock(session_id):
            session = store.load_session(session_id)
            if session["state"] != "awaiting_annotations":
                raise _error(409, "wrong-state",
                             f"annotations only accepted in awaiting_annotations; "
                             f"session is {session['state']} (clone the session to "
                             f"re-label after fine-tuning)")
            selected = set(session["selected_ids"])
            for ann in body.annotations:
                if ann.video_id not in selected:
                    raise _error(422, "unknown-video",
                                 f"video {ann.video_id!r} is not among the selected clips",
                                 field="video_id")
                if ann.label not in ("positive", "negative"):
                    raise _error(422, "invalid-label",
                                 f"label must be positive or negative, got {ann.label!r}",
                                 field="label")
            now = time.time()
            for ann in body.annotations:
                session["annotations"].append(
                    {
                        "video_id": ann.video_id,
                        "label": ann.label,
                        "annotator": ann.annotator,
                        "timestamp": now,
                    }
                )
            store.save_session(session)
            labeled = _effective_labels(session)
            return {
                "session": session_view(session),
                "labeled": sorted(labeled),
                "missing": sorted(selected - set(labeled)),
                "ready_for_finetune": selected <= set(labeled),
            }

    def _effective_labels(session: dict) -> dict[str, str]:
        annotations = [
            Annotation(a["video_id"], a["label"], a.get("annotator"),
                       a.get("timestamp", 0.0))
            for a in session["annotations"]
        ]
        return merge_annotations(annotations)

    @app.post("/sessions/{session_id}/finetune")
    def start_finetune(session_id: str, body: FinetuneStart):
        with store.session_lock(session_id):
            session = store.load_session(session_id)
            if session["state"] == "finetuning":
                raise _error(409, "already-finetuning",
                             "a fine-tune job is already running for this session")
            if session["state"] != "awaiting_annotations":
                raise _error(409, "wrong-state",
                             f"fine-tune requires awaiting_annotations, "
                             f"session is {session['state']}")
            labels = _effective_labels(session)
            missing = sorted(set(session["selected_ids"]) - set(labels))
            if missing:
                raise _error(409, "annotations-incomplete",
                             "all selected clips must be labeled before fine-tuning",
                             missing=missing)
            cfg = _config_from_dict(FinetuneConfig, body.config, "finetune-config")
            job_id = f"j-{uuid.uuid4().hex[:12]}"
            session["state"] = "finetuning"
            session["finetune"] = {"job_id": job_id, "config": asdict(cfg)}
            store.save_session(session)
            store.jobs[job_id] = {
                "id": job_id,
                "session_id": session_id,
                "status": "running",
                "error": None,
                "loss_report": None,
            }
            store.running_jobs[session_id] = job_id

        worker = threading.Thread(
            target=_run_finetune_job, args=(store, session_id, job_id, cfg), daemon=True
        )
        worker.start()
        return {"job_id": job_id, "session_id": session_id, "status": "running"}

    def _run_finetune_job(store: ServiceStore, session_id: str, job_id: str,
                          cfg: FinetuneConfig) -> None:
        job = store.jobs[job_id]
        try:
            with store.session_lock(session_id):
                session = store.load_session(session_id)
            dataset = store.get_dataset(session["dataset_id"])
            params = store.get_params(session["dataset_id"])
            index = dataset.index
            queries = [index[vid] for vid in session["query_ids"]]
            selected = [index[vid] for vid in session["selected_ids"]]
            annotations = [
                Annotation(a["video_id"], a["label"], a.get("annotator"),
                           a.get("timestamp", 0.0))
                for a in session["annotations"]
            ]
            fine_params, report = finetune(queries, selected, annotations, params, cfg)
            loss_report = {
                "stop_reason": report.stop_reason,
                "epochs": [
                    [e.epoch, e.total, e.contrastive, e.regularization]
                    for e in report.epochs
                ],
            }
            with store.session_lock(session_id):
                session = store.load_session(session_id)
                session["state"] = "ready"
                session["loss_report"] = loss_report
                session["params_finetuned"] = params_to_json_dict(fine_params)
                store.save_session(session)
                job["loss_report"] = loss_report
                job["status"] = "completed"
                store.running_jobs.pop(session_id, None)
        except Exception as exc:  # job boundary: capture any diagnostic
            with store.session_lock(session_id):
                try:
                    session = store.load_session(session_id)
                    session["state"] = "failed"
                    session["error"] = str(exc)
                    store.save_session(session)
                finally:
                    job["error"] = str(exc)
                    job["status"] = "failed"
                    store.running_jobs.pop(session_id, None)

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        job = store.jobs.get(job_id)
        if job is None:
            raise _error(404, "job-not-found", f"unknown job {job_id!r}")
        return job

    @app.post("/sessions/{session_id}/clone")
    def clone_session(session_id: str):
        source = store.load_session(session_id)
        clone = {
            **json.loads(json.dumps(source)),
            "id": f"s-{uuid.uuid4().hex[:12]}",
            "state": "awaiting_annotations",
            "finetune": None,
            "loss_report": None,
            "params_finetuned": None,
            "error": None,
            "cloned_from": session_id,
        }
        store.save_session(clone)
        return session_view(clone)

    @app.get("/sessions/{session_id}/retrieval")
    def get_retrieval(
        session_id: str,
        query: str,
        k: int = Query(default=10),
        space: str = Query(default="finetuned"),
    ):
        session = store.load_session(session_id)
        if space not in ("pretrained", "finetuned"):
            raise _error(422, "invalid-space",
                         "space must be 'pretrained' or 'finetuned'", field="space")
        dataset = store.get_dataset(session["dataset_id"])
        index = dataset.index
        if query not in index:
            raise _error(404, "video-not-found", f"unknown video {query!r}", field="query")
        if space == "finetuned":
            if session["state"] != "ready":
                raise _error(409, "not-ready",
                             f"fine-tuned space unavailable; session is {session['state']}")
            params = params_from_json_dict(session["params_finetuned"])
            pool_ids, pool_gafs = store.fine_pool_embeddings(session)
        else:
            params = store.get_params(session["dataset_id"])
            pool_ids, pool_gafs = store.pool_embeddings(session["dataset_id"])
        if k < 0 or k > len(pool_ids):
            raise _error(422, "invalid-k",
                         f"k must be in [0, {len(pool_ids)}]", field="k")
        gaf = encode_gaf(index[query], params)
        ranked = retrieve_topk_scored(gaf, pool_ids, pool_gafs, k)
        return {
            "session_id": session_id,
            "query_id": query,
            "space": space,
            "k": k,
            "results": [
                {
                    "rank": rank,
                    "id": vid,
                    "score": score,
                    "class": index[vid].class_label,
                }
                for rank, (vid, score) in enumerate(ranked, start=1)
            ],
        }

    return app

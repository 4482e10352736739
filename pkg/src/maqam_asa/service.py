"""HTTP backing for the annotation UI.

Flat-file persistence mirrors the corpus layout (<root>/<singer>/<song>.wav
plus <song>.json) with a small index file; annotation writes are atomic and
guarded by a per-song version token for optimistic concurrency.
"""

from __future__ import annotations

import json
import tempfile
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, UploadFile
from fastapi.responses import Response
from fastapi.staticfiles import StaticFiles

from . import pitch
from .annotations import parse_annotations, serialize_annotations
from .audio_io import load_wav
from .errors import (
    CorruptHeaderError,
    EmptyHistogramError,
    MaqamAsaError,
    UnsupportedFormatError,
)


class AnnotationStore:
    """Projects, songs, annotations, and version tokens on disk."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._index_path = self.root / "index.json"
        self._lock = threading.Lock()
        self._song_locks: dict[str, threading.Lock] = {}
        if self._index_path.exists():
            self._index = json.loads(self._index_path.read_text())
        else:
            self._index = {"projects": {}, "songs": {}, "next_id": 1}

    def _save_index(self) -> None:
        tmp = tempfile.NamedTemporaryFile(
            "w", dir=self.root, suffix=".tmp", delete=False
        )
        with tmp:
            json.dump(self._index, tmp, indent=2, sort_keys=True)
        Path(tmp.name).replace(self._index_path)

    def _fresh_id(self, prefix: str) -> str:
        n = self._index["next_id"]
        self._index["next_id"] = n + 1
        return f"{prefix}{n:04d}"

    def song_lock(self, song_id: str) -> threading.Lock:
        with self._lock:
            return self._song_locks.setdefault(song_id, threading.Lock())

    # ------------------------------------------------------------- projects

    def create_project(self, singer_id: str) -> dict:
        with self._lock:
            pid = self._fresh_id("p")
            project = {"id": pid, "singer_id": singer_id, "songs": []}
            self._index["projects"][pid] = project
            self._save_index()
            return project

    def get_project(self, pid: str) -> dict | None:
        return self._index["projects"].get(pid)

    def list_projects(self) -> list[dict]:
        return [self._index["projects"][k] for k in sorted(self._index["projects"])]

    # ---------------------------------------------------------------- songs

    def add_song(self, pid: str, filename: str, wav_bytes: bytes) -> dict:
        project = self.get_project(pid)
        if project is None:
            raise KeyError(pid)
        singer = project["singer_id"]
        with self._lock:
            sid = self._fresh_id("s")
        song_dir = self.root / singer
        song_dir.mkdir(parents=True, exist_ok=True)
        wav_path = song_dir / f"{sid}.wav"
        wav_path.write_bytes(wav_bytes)
        try:
            clip = load_wav(wav_path, song_id=sid, singer_id=singer)
        except MaqamAsaError:
            wav_path.unlink(missing_ok=True)
            raise
        record = {
            "id": sid,
            "filename": filename,
            "duration": round(clip.duration, 6),
            "sample_rate": clip.sample_rate,
            "singer_id": singer,
            "project_id": pid,
        }
        with self._lock:
            self._index["songs"][sid] = record
            project["songs"].append(sid)
            self._save_index()
        return record

    def get_song(self, sid: str) -> dict | None:
        return self._index["songs"].get(sid)

    def song_path(self, sid: str) -> Path:
        record = self._index["songs"][sid]
        return self.root / record["singer_id"] / f"{sid}.wav"

    def annotation_path(self, sid: str) -> Path:
        record = self._index["songs"][sid]
        return self.root / record["singer_id"] / f"{sid}.json"

    # ---------------------------------------------------------- annotations

    def read_annotations(self, sid: str) -> tuple[int, str]:
        path = self.annotation_path(sid)
        version = int(self._index["songs"][sid].get("version", 0))
        text = path.read_text() if path.exists() else "[]"
        return version, text

    def write_annotations(self, sid: str, expected_version: int, text: str) -> int:
        with self.song_lock(sid):
            current = int(self._index["songs"][sid].get("version", 0))
            if expected_version != current:
                raise VersionConflict(current)
            path = self.annotation_path(sid)
            tmp = tempfile.NamedTemporaryFile(
                "w", dir=path.parent, suffix=".tmp", delete=False
            )
            with tmp:
                tmp.write(text)
            Path(tmp.name).replace(path)
            with self._lock:
                self._index["songs"][sid]["version"] = current + 1
                self._save_index()
            return current + 1


class VersionConflict(Exception):
    def __init__(self, current: int):
        super().__init__(f"stale version token; current is {current}")
        self.current = current


def create_app(storage_root: str | Path, static_dir: str | Path | None = None) -> FastAPI:
    store = AnnotationStore(storage_root)
    app = FastAPI(title="vocal annotation service")

    def _song_or_404(song_id: str) -> dict:
        record = store.get_song(song_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown song {song_id}")
        return record

    @app.post("/v1/projects", status_code=201)
    def create_project(body: dict):
        singer = body.get("singer_id")
        if not singer or not isinstance(singer, str):
            raise HTTPException(status_code=400, detail="singer_id required")
        return store.create_project(singer)

    @app.get("/v1/projects")
    def list_projects():
        return store.list_projects()

    @app.get("/v1/projects/{project_id}")
    def get_project(project_id: str):
        project = store.get_project(project_id)
        if project is None:
            raise HTTPException(status_code=404, detail="unknown project")
        return {
            **project,
            "songs": [store.get_song(s) for s in project["songs"]],
        }

    @app.post("/v1/projects/{project_id}/songs", status_code=201)
    async def upload_song(project_id: str, file: UploadFile):
        if store.get_project(project_id) is None:
            raise HTTPException(status_code=404, detail="unknown project")
        data = await file.read()
        try:
            return store.add_song(project_id, file.filename or "upload.wav", data)
        except (UnsupportedFormatError, CorruptHeaderError) as exc:
            raise HTTPException(status_code=415, detail=str(exc)) from exc

    @app.get("/v1/songs/{song_id}/peaks")
    def peaks(song_id: str, width: int = 800):
        record = _song_or_404(song_id)
        if width < 1 or width > 100_000:
            raise HTTPException(status_code=400, detail="width out of range")
        clip = load_wav(store.song_path(song_id))
        edges = np.linspace(0, len(clip.samples), width + 1).astype(int)
        pairs = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            chunk = clip.samples[lo:hi] if hi > lo else clip.samples[lo : lo + 1]
            if chunk.size == 0:
                pairs.append([0.0, 0.0])
            else:
                pairs.append([round(float(chunk.min()), 6), round(float(chunk.max()), 6)])
        return {"duration": record["duration"], "width": width, "peaks": pairs}

    @app.get("/v1/songs/{song_id}/annotations")
    def get_annotations(song_id: str):
        _song_or_404(song_id)
        version, text = store.read_annotations(song_id)
        return {"version": version, "annotations": json.loads(text)}

    @app.put("/v1/songs/{song_id}/annotations")
    def put_annotations(song_id: str, body: dict):
        _song_or_404(song_id)
        if "annotations" not in body:
            raise HTTPException(status_code=400, detail="missing annotations")
        try:
            version = int(body.get("version", -1))
        except (TypeError, ValueError):
            raise HTTPException(status_code=400, detail="bad version token") from None
        try:
            parsed = parse_annotations(json.dumps(body["annotations"]), song_id=song_id)
        except MaqamAsaError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        duration = store.get_song(song_id)["duration"]
        for span in parsed.spans:
            if span.end > duration + 1e-6:
                raise HTTPException(
                    status_code=400,
                    detail=f"span ({span.start}, {span.end}) exceeds duration {duration}",
                )
        text = serialize_annotations(parsed)
        try:
            new_version = store.write_annotations(song_id, version, text)
        except VersionConflict as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {"version": new_version, "count": len(parsed.spans)}

    @app.get("/v1/songs/{song_id}/annotations/export")
    def export_annotations(song_id: str):
        _song_or_404(song_id)
        _, text = store.read_annotations(song_id)
        return Response(content=text, media_type="application/json")

    @app.get("/v1/songs/{song_id}/tonic")
    def tonic(song_id: str):
        _song_or_404(song_id)
        clip = load_wav(store.song_path(song_id))
        try:
            tonic_hz, confidence = pitch.estimate_tonic(clip)
        except EmptyHistogramError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"tonic_hz": round(tonic_hz, 4), "confidence": round(confidence, 6)}

    @app.get("/v1/songs/{song_id}/audio")
    def audio(song_id: str):
        _song_or_404(song_id)
        return Response(
            content=store.song_path(song_id).read_bytes(), media_type="audio/wav"
        )

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app

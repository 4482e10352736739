import io
import json
import wave

import numpy as np
import pytest
from fastapi.testclient import TestClient

from maqam_asa.service import create_app

from conftest import make_sine

EXPORT_BODY = [
    {"start": 102.404, "end": 103.064, "type": "fine_pitch_error", "detail": "Out of tone"},
    {"start": 81.196, "end": 82.536, "type": "fine_pitch_error", "detail": "Out of tone"},
]


def wav_bytes(samples, sr=22050):
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sr)
        wf.writeframes(np.round(np.asarray(samples) * 32767).astype("<i2").tobytes())
    return buf.getvalue()


@pytest.fixture
def client(tmp_path):
    app = create_app(tmp_path / "storage")
    with TestClient(app) as c:
        yield c


def upload_song(client, duration=2.0, freq=293.66):
    project = client.post("/v1/projects", json={"singer_id": "singer01"}).json()
    data = wav_bytes(make_sine(freq, duration))
    resp = client.post(
        f"/v1/projects/{project['id']}/songs",
        files={"file": ("take1.wav", data, "audio/wav")},
    )
    assert resp.status_code == 201
    return project, resp.json()


class TestProjects:
    def test_create_and_list(self, client):
        created = client.post("/v1/projects", json={"singer_id": "s1"})
        assert created.status_code == 201
        assert created.json()["singer_id"] == "s1"
        listed = client.get("/v1/projects").json()
        assert len(listed) == 1

    def test_missing_singer(self, client):
        assert client.post("/v1/projects", json={}).status_code == 400

    def test_unknown_project_404(self, client):
        assert client.get("/v1/projects/p9999").status_code == 404


class TestUpload:
    def test_upload_and_metadata(self, client):
        project, song = upload_song(client, duration=2.0)
        assert song["duration"] == pytest.approx(2.0, abs=0.01)
        assert song["sample_rate"] == 22050
        got = client.get(f"/v1/projects/{project['id']}").json()
        assert got["songs"][0]["id"] == song["id"]

    def test_non_wav_rejected_415(self, client):
        project = client.post("/v1/projects", json={"singer_id": "s"}).json()
        resp = client.post(
            f"/v1/projects/{project['id']}/songs",
            files={"file": ("bad.wav", b"mp3 pretending", "audio/wav")},
        )
        assert resp.status_code == 415

    def test_unknown_song_404(self, client):
        assert client.get("/v1/songs/s9999/peaks").status_code == 404
        assert client.get("/v1/songs/s9999/annotations").status_code == 404
        assert client.get("/v1/songs/s9999/tonic").status_code == 404


class TestPeaks:
    def test_width_contract(self, client):
        _, song = upload_song(client)
        payload = client.get(f"/v1/songs/{song['id']}/peaks", params={"width": 100}).json()
        assert len(payload["peaks"]) == 100
        assert all(-1.0 <= lo <= hi <= 1.0 for lo, hi in payload["peaks"])

    def test_idempotent(self, client):
        _, song = upload_song(client)
        a = client.get(f"/v1/songs/{song['id']}/peaks", params={"width": 64}).content
        b = client.get(f"/v1/songs/{song['id']}/peaks", params={"width": 64}).content
        assert a == b


class TestAnnotations:
    def test_put_then_export_round_trip(self, client):
        _, song = upload_song(client, duration=120.0)
        put = client.put(
            f"/v1/songs/{song['id']}/annotations",
            json={"version": 0, "annotations": EXPORT_BODY},
        )
        assert put.status_code == 200
        assert put.json()["version"] == 1
        exported = client.get(f"/v1/songs/{song['id']}/annotations/export")
        parsed = json.loads(exported.content)
        assert sorted(parsed, key=lambda s: s["start"]) == sorted(
            EXPORT_BODY, key=lambda s: s["start"]
        )
        assert parsed[0]["start"] == 81.196  # millisecond values intact

    def test_version_conflict_409(self, client):
        _, song = upload_song(client, duration=10.0)
        body = [{"start": 1.0, "end": 2.0, "type": "rhythm_error"}]
        ok = client.put(f"/v1/songs/{song['id']}/annotations",
                        json={"version": 0, "annotations": body})
        assert ok.status_code == 200
        stale = client.put(f"/v1/songs/{song['id']}/annotations",
                           json={"version": 0, "annotations": []})
        assert stale.status_code == 409
        # nothing was applied by the stale write
        current = client.get(f"/v1/songs/{song['id']}/annotations").json()
        assert current["version"] == 1
        assert len(current["annotations"]) == 1

    def test_inverted_span_400(self, client):
        _, song = upload_song(client, duration=10.0)
        resp = client.put(
            f"/v1/songs/{song['id']}/annotations",
            json={"version": 0,
                  "annotations": [{"start": 3.0, "end": 1.0, "type": "rhythm_error"}]},
        )
        assert resp.status_code == 400

    def test_span_beyond_duration_400(self, client):
        _, song = upload_song(client, duration=2.0)
        resp = client.put(
            f"/v1/songs/{song['id']}/annotations",
            json={"version": 0,
                  "annotations": [{"start": 1.0, "end": 9.0, "type": "rhythm_error"}]},
        )
        assert resp.status_code == 400

    def test_empty_annotations_roundtrip(self, client):
        _, song = upload_song(client, duration=5.0)
        got = client.get(f"/v1/songs/{song['id']}/annotations").json()
        assert got == {"version": 0, "annotations": []}
        export = client.get(f"/v1/songs/{song['id']}/annotations/export")
        assert export.content == b"[]"


class TestTonic:
    def test_drone_tonic(self, client):
        _, song = upload_song(client, duration=2.0, freq=293.66)
        payload = client.get(f"/v1/songs/{song['id']}/tonic").json()
        cents = abs(1200 * np.log2(payload["tonic_hz"] / 293.66))
        assert cents < 10
        assert 0.0 < payload["confidence"] <= 1.0


class TestPersistence:
    def test_reopening_store_keeps_state(self, tmp_path):
        storage = tmp_path / "storage"
        with TestClient(create_app(storage)) as client:
            _, song = upload_song(client, duration=3.0)
            client.put(f"/v1/songs/{song['id']}/annotations",
                       json={"version": 0,
                             "annotations": [{"start": 0.5, "end": 1.0,
                                              "type": "modal_drift_error"}]})
        with TestClient(create_app(storage)) as client:
            got = client.get(f"/v1/songs/{song['id']}/annotations").json()
            assert got["version"] == 1
            assert got["annotations"][0]["type"] == "modal_drift_error"

import base64
import threading
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from textforge.diffusion import (
    Denoiser,
    DenoiserConfig,
    DiffusionModels,
    SamplerConfig,
)
from textforge.geometry import BoundingBoxSet
from textforge.layout import LayoutModel, LayoutModelConfig
from textforge.pipeline import LayoutResult, TwoStagePipeline
from textforge.service import (
    JobStore,
    ServiceState,
    create_app,
    mask_checksum,
    png_b64_decode,
    png_b64_encode,
    png_bytes,
)
from textforge.tokenizer import default_tokenizer
from textforge.vae import ToyVAE, VAEConfig

SIZE = 32
BOXES = [[0.05, 0.15, 0.95, 0.55], [0.05, 0.58, 0.7, 0.95]]
WORDS = ["hello", "sun"]


def _tiny_pipeline() -> TwoStagePipeline:
    torch.manual_seed(0)
    tok = default_tokenizer(32)
    layout = LayoutModel(
        LayoutModelConfig(vocab_size=tok.vocab_size, num_layers=1, dim=32, seq_len=32, num_heads=4)
    )
    vae = ToyVAE(VAEConfig(base_width=16)).eval()
    den = Denoiser(
        DenoiserConfig(
            vocab_size=tok.vocab_size, image_size=SIZE, text_dim=32,
            context_length=32, base_width=16, channel_mults=(1, 2), attn_stages=(1,),
        )
    )
    den.trained.fill_(True)
    return TwoStagePipeline(layout, DiffusionModels(vae=vae, denoiser=den), tokenizer=tok)


@pytest.fixture()
def client(tmp_path):
    pipe = _tiny_pipeline()
    app = create_app(pipe, tmp_path / "jobs.sqlite", SamplerConfig(steps=2, guidance_scale=1.0, seed=0))
    with TestClient(app) as c:
        c.pipeline = pipe
        yield c


def _wait(client, job_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/v1/jobs/{job_id}").json()
        if job["status"] in ("done", "failed"):
            return job
        time.sleep(0.02)
    raise TimeoutError(job_id)


def _region_b64():
    region = np.zeros((SIZE, SIZE), dtype=np.uint8)
    region[8:24, 8:24] = 255
    return png_b64_encode(region), region


def _image_b64():
    rng = np.random.default_rng(0)
    return png_b64_encode(rng.integers(0, 256, (SIZE, SIZE, 3), dtype=np.uint8))


# -- encoding helpers -------------------------------------------------------------


def test_png_round_trip_gray_and_rgb():
    gray = np.arange(SIZE * SIZE, dtype=np.uint8).reshape(SIZE, SIZE)
    assert np.array_equal(png_b64_decode(png_b64_encode(gray)), gray)
    rgb = np.random.default_rng(1).integers(0, 256, (SIZE, SIZE, 3), dtype=np.uint8)
    assert np.array_equal(png_b64_decode(png_b64_encode(rgb)), rgb)


def test_mask_checksum_shape_sensitive():
    a = np.zeros((4, 8), dtype=np.uint8)
    b = np.zeros((8, 4), dtype=np.uint8)
    assert mask_checksum(a) != mask_checksum(b)
    assert mask_checksum(a) == mask_checksum(a.copy())


# -- layout endpoint --------------------------------------------------------------


def test_layout_mask_round_trip_bit_identical(client):
    resp = client.post("/v1/layout", json={"boxes": BOXES, "keywords": WORDS})
    assert resp.status_code == 200
    body = resp.json()
    grid = png_b64_decode(body["mask_png_b64"])
    assert mask_checksum(grid) == body["mask_checksum"]
    local = client.pipeline.render_mask(
        WORDS, BoundingBoxSet(np.array(BOXES, dtype=np.float64))
    )
    assert np.array_equal(grid, local.grid)
    assert body["image_size"] == SIZE
    assert body["keywords"] == WORDS


def test_layout_prompt_path_uses_stage1(client):
    fixed = LayoutResult(["sun"], BoundingBoxSet(np.array([[0.1, 0.2, 0.9, 0.6]])))
    client.pipeline.predict_layout = lambda prompt: fixed
    resp = client.post("/v1/layout", json={"prompt": 'a sign saying "sun"'})
    assert resp.status_code == 200
    body = resp.json()
    assert body["keywords"] == ["sun"]
    assert body["boxes"] == [[0.1, 0.2, 0.9, 0.6]]


def test_layout_unbalanced_quotes_400(client):
    resp = client.post("/v1/layout", json={"prompt": 'a sign saying "sun'})
    assert resp.status_code == 400
    assert resp.json()["detail"]["code"] == "unbalanced_quotes"


def test_layout_boxes_without_keywords_422(client):
    resp = client.post("/v1/layout", json={"boxes": BOXES})
    assert resp.status_code == 422
    assert resp.json()["detail"]["code"] == "incomplete_layout"


def test_layout_malformed_boxes_422(client):
    resp = client.post("/v1/layout", json={"boxes": [[0.1, 0.2, 0.3]], "keywords": ["a"]})
    assert resp.status_code == 422
    assert resp.json()["detail"]["code"] == "invalid_layout"


# -- generate endpoint -------------------------------------------------------------


def test_generate_job_lifecycle_and_timing(client):
    resp = client.post(
        "/v1/generate",
        json={"prompt": 'a poster of "hello" and "sun"', "boxes": BOXES, "keywords": WORDS},
    )
    assert resp.status_code == 200
    job_id = resp.json()["job_id"]
    job = _wait(client, job_id)
    assert job["status"] == "done"
    assert job["enqueued_at"] <= job["started_at"] <= job["finished_at"]
    result = client.get(f"/v1/results/{job_id}")
    assert result.status_code == 200
    img = png_b64_decode(result.json()["image_png_b64"])
    assert img.shape == (SIZE, SIZE, 3)
    assert result.json()["image_checksum"] == mask_checksum(img)


def test_generate_deterministic_for_same_seed(client):
    req = {
        "prompt": 'a poster of "hello" and "sun"',
        "boxes": BOXES,
        "keywords": WORDS,
        "seed": 7,
    }
    ids = [client.post("/v1/generate", json=req).json()["job_id"] for _ in range(2)]
    images = []
    for job_id in ids:
        assert _wait(client, job_id)["status"] == "done"
        images.append(png_b64_decode(client.get(f"/v1/results/{job_id}").json()["image_png_b64"]))
    assert np.array_equal(images[0], images[1])


def test_generate_conflicting_sources_422(client):
    mask_b64 = png_b64_encode(np.zeros((SIZE, SIZE), dtype=np.uint8))
    resp = client.post(
        "/v1/generate",
        json={"prompt": "x", "boxes": BOXES, "keywords": WORDS, "mask_png_b64": mask_b64},
    )
    assert resp.status_code == 422
    assert resp.json()["detail"]["code"] == "conflicting_condition_sources"


def test_generate_too_many_keywords_422(client):
    prompt = " ".join(f'"w{i}"' for i in range(9))
    resp = client.post("/v1/generate", json={"prompt": prompt})
    assert resp.status_code == 422
    assert resp.json()["detail"]["code"] == "too_many_keywords"


def test_generate_wrong_mask_size_409(client):
    mask_b64 = png_b64_encode(np.zeros((SIZE * 2, SIZE * 2), dtype=np.uint8))
    resp = client.post("/v1/generate", json={"prompt": "x", "mask_png_b64": mask_b64})
    assert resp.status_code == 409
    assert resp.json()["detail"]["code"] == "mask_dimension_mismatch"


def test_generate_bad_base64_400(client):
    resp = client.post("/v1/generate", json={"prompt": "x", "mask_png_b64": "not-a-png"})
    assert resp.status_code == 400
    assert resp.json()["detail"]["code"] == "bad_image_encoding"


# -- inpaint endpoint ---------------------------------------------------------------


def test_inpaint_kind_selection_and_region_checksum(client):
    region_b64, region = _region_b64()
    image_b64 = _image_b64()
    with_text = client.post(
        "/v1/inpaint",
        json={"image_png_b64": image_b64, "region_png_b64": region_b64, "text": "hi"},
    ).json()
    no_text = client.post(
        "/v1/inpaint", json={"image_png_b64": image_b64, "region_png_b64": region_b64}
    ).json()
    assert with_text["kind"] == "inpaint"
    assert no_text["kind"] == "remove"
    assert with_text["region_checksum"] == mask_checksum(region)
    for job_id in (with_text["job_id"], no_text["job_id"]):
        assert _wait(client, job_id)["status"] == "done"


def test_inpaint_empty_region_422(client):
    empty_b64 = png_b64_encode(np.zeros((SIZE, SIZE), dtype=np.uint8))
    resp = client.post(
        "/v1/inpaint", json={"image_png_b64": _image_b64(), "region_png_b64": empty_b64}
    )
    assert resp.status_code == 422
    assert resp.json()["detail"]["code"] == "empty_region"


def test_inpaint_wrong_image_size_409(client):
    big = png_b64_encode(np.zeros((SIZE * 2, SIZE * 2, 3), dtype=np.uint8))
    region_b64, _ = _region_b64()
    resp = client.post("/v1/inpaint", json={"image_png_b64": big, "region_png_b64": region_b64})
    assert resp.status_code == 409


# -- job queries --------------------------------------------------------------------


def test_unknown_job_404(client):
    assert client.get("/v1/jobs/nope").status_code == 404
    assert client.get("/v1/results/nope").status_code == 404


def test_result_before_done_409(client):
    # a job that cannot have finished yet (queued behind nothing, but we ask
    # immediately and the worker needs some milliseconds)
    resp = client.post(
        "/v1/generate",
        json={"prompt": 'a "sun" sign', "boxes": BOXES[:1], "keywords": ["sun"]},
    )
    job_id = resp.json()["job_id"]
    r = client.get(f"/v1/results/{job_id}")
    if r.status_code == 409:  # may legitimately already be done on a fast box
        assert r.json()["detail"]["code"] in ("job_not_finished", "job_failed")
    _wait(client, job_id)


def test_failed_job_reports_error(client):
    # an inpaint whose region renders text impossibly small fails in the worker
    region = np.zeros((SIZE, SIZE), dtype=np.uint8)
    region[0:2, 0:2] = 255
    resp = client.post(
        "/v1/inpaint",
        json={
            "image_png_b64": _image_b64(),
            "region_png_b64": png_b64_encode(region),
            "text": "toolongword impossible",
        },
    )
    job_id = resp.json()["job_id"]
    job = _wait(client, job_id)
    assert job["status"] == "failed"
    assert job["error"]
    result = client.get(f"/v1/results/{job_id}")
    assert result.status_code == 409
    assert result.json()["detail"]["code"] == "job_failed"


def test_twenty_parallel_jobs_all_terminal(client):
    ids = []
    lock = threading.Lock()

    def submit():
        resp = client.post(
            "/v1/generate",
            json={"prompt": 'a "sun" sign', "boxes": BOXES[:1], "keywords": ["sun"]},
        )
        with lock:
            ids.append(resp.json()["job_id"])

    threads = [threading.Thread(target=submit) for _ in range(20)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(set(ids)) == 20
    statuses = {_wait(client, job_id, timeout=120)["status"] for job_id in ids}
    assert statuses == {"done"}


# -- persistence and restart recovery ------------------------------------------------


def test_restart_requeues_pending_and_running(tmp_path):
    store_path = tmp_path / "jobs.sqlite"
    store = JobStore(store_path)
    queued = store.create("generate", {"prompt": 'a "sun" sign', "boxes": BOXES[:1], "keywords": ["sun"]})
    crashed = store.create("generate", {"prompt": 'a "sun" sign', "boxes": BOXES[:1], "keywords": ["sun"]})
    store.set_running(crashed.id)  # simulate a worker that died mid-job

    pipe = _tiny_pipeline()
    app = create_app(pipe, store_path, SamplerConfig(steps=2, guidance_scale=1.0, seed=0))
    with TestClient(app) as client:
        for job_id in (queued.id, crashed.id):
            deadline = time.time() + 60
            while time.time() < deadline:
                job = client.get(f"/v1/jobs/{job_id}").json()
                if job["status"] in ("done", "failed"):
                    break
                time.sleep(0.05)
            assert job["status"] == "done"


def test_store_illegal_transition_raises(tmp_path):
    from textforge.errors import DataError

    store = JobStore(tmp_path / "jobs.sqlite")
    job = store.create("generate", {})
    with pytest.raises(DataError):
        store.set_done(job.id, b"png")  # queued -> done skips running


def test_store_round_trips_payload(tmp_path):
    store = JobStore(tmp_path / "jobs.sqlite")
    payload = {"prompt": "x", "seed": 5, "boxes": [[0.1, 0.2, 0.3, 0.4]]}
    job = store.create("generate", payload)
    assert store.get(job.id).payload == payload
    assert store.get("missing") is None

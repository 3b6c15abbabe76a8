import threading
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from encoder_service.app import create_app


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small random-weight RoBERTa plus word-level tokenizer, saved locally
    so tests run without model-hub access."""
    from tokenizers import Tokenizer, models, pre_tokenizers
    from tokenizers.processors import TemplateProcessing
    from transformers import PreTrainedTokenizerFast, RobertaConfig, RobertaModel

    path = tmp_path_factory.mktemp("tiny-roberta")
    vocab = {"<s>": 0, "<pad>": 1, "</s>": 2, "<unk>": 3}
    for word in ["hello", "world", "dense", "retrieval"] + [f"w{i}" for i in range(500)]:
        vocab[word] = len(vocab)
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    tok.post_processor = TemplateProcessing(
        single="<s> $A </s>", special_tokens=[("<s>", 0), ("</s>", 2)]
    )
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        bos_token="<s>",
        eos_token="</s>",
        pad_token="<pad>",
        unk_token="<unk>",
        cls_token="<s>",
        sep_token="</s>",
        mask_token="<unk>",
        model_max_length=512,
    )
    fast.save_pretrained(path)
    torch.manual_seed(0)
    config = RobertaConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=514,
        pad_token_id=1,
        bos_token_id=0,
        eos_token_id=2,
    )
    RobertaModel(config).save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def client(tiny_model_dir):
    app = create_app(model_name=tiny_model_dir, max_batch=8)
    with TestClient(app) as client:
        yield client


class TestHealth:
    def test_503_before_load(self, tiny_model_dir):
        app = create_app(model_name=tiny_model_dir)
        bare = TestClient(app)  # no context: lifespan (model load) never runs
        assert bare.get("/health").status_code == 503

    def test_ok_after_load(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert body["dimension"] == 32
        assert "model" in body

    def test_repeated_calls_stable(self, client):
        assert client.get("/health").json() == client.get("/health").json()


class TestEncode:
    def test_deterministic(self, client):
        a = client.post("/encode", json={"texts": ["hello world"], "mode": "query"}).json()
        b = client.post("/encode", json={"texts": ["hello world"], "mode": "query"}).json()
        assert a == b

    def test_response_shape(self, client):
        body = client.post(
            "/encode", json={"texts": ["hello", "world w1 w2"], "mode": "passage"}
        ).json()
        assert body["dimension"] == 32
        assert len(body["vectors"]) == 2
        assert all(len(v) == 32 for v in body["vectors"])

    def test_order_preserved(self, client):
        texts = [f"w{i} w{i + 1} hello" for i in range(5)]
        batch = client.post("/encode", json={"texts": texts, "mode": "query"}).json()
        for i, text in enumerate(texts):
            single = client.post("/encode", json={"texts": [text], "mode": "query"}).json()
            assert np.allclose(batch["vectors"][i], single["vectors"][0], atol=1e-5)

    def test_batch_matches_single_within_tolerance(self, client):
        texts = ["hello world", "dense retrieval w3 w4 w5"]
        batch = client.post("/encode", json={"texts": texts, "mode": "passage"}).json()
        for i, text in enumerate(texts):
            single = client.post("/encode", json={"texts": [text], "mode": "passage"}).json()
            diff = np.abs(np.array(batch["vectors"][i]) - np.array(single["vectors"][0]))
            assert diff.max() < 1e-5

    def test_empty_texts_rejected(self, client):
        response = client.post("/encode", json={"texts": [], "mode": "query"})
        assert response.status_code == 400
        assert "error" in response.json()

    def test_oversize_batch_rejected(self, client):
        response = client.post(
            "/encode", json={"texts": ["x"] * 9, "mode": "query"}
        )
        assert response.status_code == 400

    def test_bad_mode_rejected(self, client):
        response = client.post("/encode", json={"texts": ["x"], "mode": "sideways"})
        assert response.status_code == 400

    def test_query_and_passage_modes_differ_only_by_truncation(self, client):
        short = "hello world dense"
        q = client.post("/encode", json={"texts": [short], "mode": "query"}).json()
        p = client.post("/encode", json={"texts": [short], "mode": "passage"}).json()
        assert np.allclose(q["vectors"][0], p["vectors"][0], atol=1e-6)


class TestTruncation:
    def test_passage_truncates_at_300_tokens(self, client):
        words = [f"w{i % 500}" for i in range(400)]
        full = " ".join(words)
        # identical in the first 298 words (300 minus <s> and </s>), then diverging
        twin = " ".join(words[:298] + ["hello"] * 102)
        a = client.post("/encode", json={"texts": [full], "mode": "passage"}).json()
        b = client.post("/encode", json={"texts": [twin], "mode": "passage"}).json()
        assert a["vectors"][0] == b["vectors"][0]

    def test_query_keeps_350_tokens(self, client):
        words = [f"w{i % 500}" for i in range(400)]
        full = " ".join(words)
        twin = " ".join(words[:298] + ["hello"] * 102)  # differs within 348 tokens
        a = client.post("/encode", json={"texts": [full], "mode": "query"}).json()
        b = client.post("/encode", json={"texts": [twin], "mode": "query"}).json()
        assert a["vectors"][0] != b["vectors"][0]

    def test_divergence_beyond_350_is_invisible_to_queries(self, client):
        words = [f"w{i % 500}" for i in range(400)]
        full = " ".join(words)
        twin = " ".join(words[:348] + ["hello"] * 52)
        a = client.post("/encode", json={"texts": [full], "mode": "query"}).json()
        b = client.post("/encode", json={"texts": [twin], "mode": "query"}).json()
        assert a["vectors"][0] == b["vectors"][0]


class TestEngineClientConformance:
    """Drive the service through the retrieval engine's remote-encoder client
    over a real socket: the shared protocol is the integration contract."""

    @pytest.fixture(scope="class")
    def server_url(self, tiny_model_dir):
        import uvicorn

        app = create_app(model_name=tiny_model_dir, max_batch=16)
        config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        for _ in range(100):
            if server.started:
                break
            time.sleep(0.1)
        assert server.started
        host, port = server.servers[0].sockets[0].getsockname()[:2]
        yield f"http://{host}:{port}"
        server.should_exit = True
        thread.join(timeout=5)

    def test_remote_encoder_round_trip(self, server_url):
        from hopret.encoders import QueryInput, RemoteEncoder

        encoder = RemoteEncoder(server_url)
        first = encoder.encode_query(QueryInput("hello world"))
        second = encoder.encode_query(QueryInput("hello world"))
        assert np.array_equal(first, second)
        assert encoder.dimension == 32

    def test_remote_encoder_batch_order(self, server_url):
        from hopret.encoders import RemoteEncoder

        encoder = RemoteEncoder(server_url)
        texts = ["hello", "world", "dense retrieval"]
        batch = encoder.encode_texts(texts, mode="passage")
        for i, text in enumerate(texts):
            single = encoder.encode_texts([text], mode="passage")[0]
            assert np.allclose(batch[i], single, atol=1e-5)

    def test_dimension_mismatch_detected(self, server_url):
        from hopret.encoders import RemoteEncoder, RemoteEncoderError

        encoder = RemoteEncoder(server_url, dimension=64)
        with pytest.raises(RemoteEncoderError, match="dimension"):
            encoder.encode_texts(["hello"], mode="query")

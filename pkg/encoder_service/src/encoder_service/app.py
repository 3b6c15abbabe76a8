"""HTTP microservice exposing a pretrained transformer text encoder.

Protocol: POST /encode {"texts": [...], "mode": "query"|"passage"} returns
{"vectors": [[...], ...], "dimension": int} with response order matching
request order.  Pooling takes the first token's hidden state from the final
encoder layer (which the encoder's last block has already layer-normalized).
Queries truncate at 350 tokens, passages at 300.

Configuration via environment: MDR_MODEL (model name or local path,
default roberta-base), MDR_PORT (default 8089), MDR_MAX_BATCH (default 64).
"""

from __future__ import annotations

import os
from contextlib import asynccontextmanager

import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

DEFAULT_MODEL = "roberta-base"
DEFAULT_PORT = 8089
DEFAULT_MAX_BATCH = 64

MAX_PASSAGE_TOKENS = 300
MAX_QUERY_TOKENS = 350

_TRUNCATION = {"passage": MAX_PASSAGE_TOKENS, "query": MAX_QUERY_TOKENS}


class EncodeRequest(BaseModel):
    texts: list[str] = Field(description="texts to encode, order preserved")
    mode: str = Field(description="'query' or 'passage' (sets truncation length)")


class EncoderState:
    def __init__(self, model_name: str, max_batch: int):
        self.model_name = model_name
        self.max_batch = max_batch
        self.tokenizer = None
        self.model = None
        self.dimension: int | None = None

    def load(self) -> None:
        from transformers import AutoModel, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(self.model_name)
        self.model = AutoModel.from_pretrained(self.model_name)
        self.model.eval()
        self.dimension = int(self.model.config.hidden_size)

    @property
    def ready(self) -> bool:
        return self.model is not None

    def encode(self, texts: list[str], mode: str) -> list[list[float]]:
        batch = self.tokenizer(
            texts,
            padding=True,
            truncation=True,
            max_length=_TRUNCATION[mode],
            return_tensors="pt",
        )
        with torch.inference_mode():
            output = self.model(**batch)
        rows = output.last_hidden_state[:, 0, :].numpy()
        return [[float(v) for v in row] for row in rows]


def create_app(model_name: str | None = None, max_batch: int | None = None) -> FastAPI:
    state = EncoderState(
        model_name=model_name or os.environ.get("MDR_MODEL", DEFAULT_MODEL),
        max_batch=max_batch or int(os.environ.get("MDR_MAX_BATCH", DEFAULT_MAX_BATCH)),
    )

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state.load()
        yield

    app = FastAPI(title="encoder-service", lifespan=lifespan)
    app.state.encoder = state

    @app.get("/health")
    def health():
        if not state.ready:
            return JSONResponse({"error": "model not loaded"}, status_code=503)
        return {"status": "ok", "dimension": state.dimension, "model": state.model_name}

    @app.post("/encode")
    def encode(request: EncodeRequest):
        if not state.ready:
            return JSONResponse({"error": "model not loaded"}, status_code=503)
        if not request.texts:
            return JSONResponse({"error": "texts must be non-empty"}, status_code=400)
        if len(request.texts) > state.max_batch:
            return JSONResponse(
                {"error": f"batch of {len(request.texts)} exceeds limit {state.max_batch}"},
                status_code=400,
            )
        if request.mode not in _TRUNCATION:
            return JSONResponse(
                {"error": f"mode must be 'query' or 'passage', got {request.mode!r}"},
                status_code=400,
            )
        try:
            vectors = state.encode(request.texts, request.mode)
        except Exception as exc:  # surface model failures as JSON per protocol
            return JSONResponse({"error": str(exc)}, status_code=500)
        return {"vectors": vectors, "dimension": state.dimension}

    return app


app = create_app()


def main() -> None:
    import uvicorn

    port = int(os.environ.get("MDR_PORT", DEFAULT_PORT))
    uvicorn.run(app, host="0.0.0.0", port=port)


if __name__ == "__main__":
    main()

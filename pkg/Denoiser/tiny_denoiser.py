"""Single-layer bidirectional attention denoiser in plain numpy, with a hand-written backward pass."""
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from Denoiser.denoiser_contract import suppress_special
from Diffusion.diffusion_dataclass import DenoiserOutput, SeqState
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable

KEY_MASK = -1e9

PARAM_ORDER = ("tok_emb", "pos_emb", "time_emb", "Wq", "Wk", "Wv", "Wo", "bo", "W1", "b1", "W2", "b2")


class LengthExceeded(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    K: int = DEFAULT_TABLE.K
    max_len: int = 64
    d: int = 32
    heads: int = 2
    ffn: int = 64
    time_bins: int = 32

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        d, f, K = self.d, self.ffn, self.K
        return {
            "tok_emb": (K, d), "pos_emb": (self.max_len, d), "time_emb": (self.time_bins, d),
            "Wq": (d, d), "Wk": (d, d), "Wv": (d, d), "Wo": (d, d), "bo": (d,),
            "W1": (d, f), "b1": (f,), "W2": (f, K), "b2": (K,),
        }

    def to_dict(self) -> dict:
        return asdict(self)


def round_to_float32(params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {name: value.astype(np.float32).astype(np.float64) for name, value in params.items()}


def init_params(config: DenoiserConfig, seed: int = 0) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in config.shapes().items():
        if name.startswith("b"):
            params[name] = np.zeros(shape)
        elif name.endswith("_emb"):
            params[name] = rng.normal(0.0, 0.1, size=shape)
        else:
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
    return round_to_float32(params)


class TinyDenoiser:
    def __init__(self, config: Optional[DenoiserConfig] = None, params: Optional[Dict[str, np.ndarray]] = None,
                 table: TokenTable = DEFAULT_TABLE, seed: int = 0):
        self.config = config or DenoiserConfig(K=table.K)
        if self.config.K != table.K:
            raise ValueError(f"config K={self.config.K} does not match token table K={table.K}")
        self.table = table
        self.params = params if params is not None else init_params(self.config, seed)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[name].ravel() for name in PARAM_ORDER])

    @classmethod
    def from_flat(cls, config: DenoiserConfig, flat: np.ndarray, table: TokenTable = DEFAULT_TABLE) -> "TinyDenoiser":
        params, offset = {}, 0
        for name in PARAM_ORDER:
            shape = config.shapes()[name]
            size = int(np.prod(shape))
            params[name] = np.asarray(flat[offset:offset + size], dtype=np.float64).reshape(shape)
            offset += size
        if offset != len(flat):
            raise ValueError(f"weight vector has {len(flat)} values, architecture needs {offset}")
        return cls(config, params, table)

    def time_bucket(self, t: np.ndarray) -> np.ndarray:
        bins = self.config.time_bins
        return np.clip((np.asarray(t, dtype=np.float64) * bins).astype(np.int64), 0, bins - 1)

    def forward(self, ids: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, dict]:
        """Logits for a (B, L) batch; the cache feeds ``backward``."""
        p = self.params
        B, L = ids.shape
        if L > self.config.max_len:
            raise LengthExceeded(f"sequence length {L} exceeds the configured maximum {self.config.max_len}")
        H, dh = self.config.heads, self.config.head_dim
        buckets = self.time_bucket(t)

        h0 = p["tok_emb"][ids] + p["pos_emb"][:L][None] + p["time_emb"][buckets][:, None, :]
        qh = (h0 @ p["Wq"]).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
        kh = (h0 @ p["Wk"]).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
        vh = (h0 @ p["Wv"]).reshape(B, L, H, dh).transpose(0, 2, 1, 3)

        scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh)
        scores = scores + np.where(ids == self.table.pad_id, KEY_MASK, 0.0)[:, None, None, :]
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)

        ctx = (attn @ vh).transpose(0, 2, 1, 3).reshape(B, L, -1)
        h1 = h0 + ctx @ p["Wo"] + p["bo"]
        hidden = np.tanh(h1 @ p["W1"] + p["b1"])
        logits = suppress_special(hidden @ p["W2"] + p["b2"], self.table)

        cache = dict(ids=ids, buckets=buckets, h0=h0, qh=qh, kh=kh, vh=vh, attn=attn, ctx=ctx, h1=h1,
                     hidden=hidden)
        return logits, cache

    def backward(self, cache: dict, dlogits: np.ndarray) -> Dict[str, np.ndarray]:
        p = self.params
        ids = cache["ids"]
        B, L = ids.shape
        H, dh = self.config.heads, self.config.head_dim
        dlogits = dlogits.copy()
        dlogits[..., self.table.mask_id] = 0.0
        dlogits[..., self.table.pad_id] = 0.0

        grads = {}
        hidden, h1, h0 = cache["hidden"], cache["h1"], cache["h0"]
        grads["W2"] = np.einsum("blf,blk->fk", hidden, dlogits)
        grads["b2"] = dlogits.sum(axis=(0, 1))
        dpre = (dlogits @ p["W2"].T) * (1.0 - hidden ** 2)
        grads["W1"] = np.einsum("bld,blf->df", h1, dpre)
        grads["b1"] = dpre.sum(axis=(0, 1))
        dh1 = dpre @ p["W1"].T

        grads["Wo"] = np.einsum("bld,ble->de", cache["ctx"], dh1)
        grads["bo"] = dh1.sum(axis=(0, 1))
        dctx = (dh1 @ p["Wo"].T).reshape(B, L, H, dh).transpose(0, 2, 1, 3)

        attn, qh, kh, vh = cache["attn"], cache["qh"], cache["kh"], cache["vh"]
        dattn = dctx @ vh.transpose(0, 1, 3, 2)
        dvh = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) / np.sqrt(dh)
        dqh = dscores @ kh
        dkh = dscores.transpose(0, 1, 3, 2) @ qh

        def merge(x):
            return x.transpose(0, 2, 1, 3).reshape(B, L, -1)

        dq, dk, dv = merge(dqh), merge(dkh), merge(dvh)
        grads["Wq"] = np.einsum("bld,ble->de", h0, dq)
        grads["Wk"] = np.einsum("bld,ble->de", h0, dk)
        grads["Wv"] = np.einsum("bld,ble->de", h0, dv)
        dh0 = dh1 + dq @ p["Wq"].T + dk @ p["Wk"].T + dv @ p["Wv"].T

        grads["tok_emb"] = np.zeros_like(p["tok_emb"])
        np.add.at(grads["tok_emb"], ids, dh0)
        grads["pos_emb"] = np.zeros_like(p["pos_emb"])
        grads["pos_emb"][:L] = dh0.sum(axis=0)
        grads["time_emb"] = np.zeros_like(p["time_emb"])
        np.add.at(grads["time_emb"], cache["buckets"], dh0.sum(axis=1))
        return grads

    def predict(self, state: SeqState) -> DenoiserOutput:
        logits, _ = self.forward(state.ids[None, :], np.array([state.t]))
        return DenoiserOutput.from_logits(logits[0])

    def predict_batch(self, ids: np.ndarray, t: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(np.asarray(ids, dtype=np.int64), np.asarray(t, dtype=np.float64))
        return logits


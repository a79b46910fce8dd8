"""Blackbox teacher handles and exact query accounting.

A teacher exposes only (images -> class probabilities).  Two kinds exist: a
local in-process model and a remote HTTP endpoint speaking the /predict
protocol (see ``service``).  Every labeled image is counted once in the
QueryLedger; partial remote batches are never merged, so ledger and label
set stay consistent even across failures.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from . import nn
from .errors import InputError, ProtocolError, TransportError


@dataclass
class QueryLedger:
    total: int = 0
    per_round: list = field(default_factory=list)  # (round index, count)

    def record(self, round_index, count):
        self.total += int(count)
        self.per_round.append((int(round_index), int(count)))

    def to_json(self):
        return {"total": self.total, "per_round": [list(p) for p in self.per_round]}

    @classmethod
    def from_json(cls, payload):
        ledger = cls(total=int(payload["total"]),
                     per_round=[tuple(p) for p in payload["per_round"]])
        if ledger.total != sum(c for _, c in ledger.per_round):
            raise InputError("ledger total does not match per-round counts")
        return ledger


class LocalTeacher:
    """In-process teacher wrapping a model checkpoint."""

    def __init__(self, model):
        self.model = model
        self.num_classes = model.spec.num_classes
        self.input_shape = model.spec.input_shape

    def predict(self, images):
        return nn.predict_probs(self.model, images)


class RemoteTeacher:
    """HTTP client for the /predict protocol with bounded retries."""

    def __init__(self, url, timeout=30.0, batch_limit=256, retries=3):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.batch_limit = batch_limit
        self.retries = retries
        info = self._request_info()
        self.num_classes = int(info["num_classes"])
        self.input_shape = tuple(info["input_shape"])
        self.model_id = info.get("model_id", "")

    def _request_info(self):
        try:
            resp = requests.get(f"{self.url}/info", timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, json.JSONDecodeError) as e:
            raise TransportError(f"cannot reach teacher at {self.url}: {e}") from e

    def _post_chunk(self, chunk):
        body = {"shape": list(chunk.shape), "pixels": chunk.ravel().tolist()}
        last = None
        for attempt in range(self.retries):
            try:
                resp = requests.post(f"{self.url}/predict", json=body, timeout=self.timeout)
                if resp.status_code != 200:
                    raise TransportError(
                        f"teacher returned HTTP {resp.status_code}: {resp.text[:200]}")
                payload = resp.json()
                probs = np.array(payload["probs"], dtype=np.float64)
                if probs.shape != (chunk.shape[0], self.num_classes):
                    raise ProtocolError(
                        f"teacher answered with shape {probs.shape}, "
                        f"expected {(chunk.shape[0], self.num_classes)}")
                return probs
            except (requests.RequestException, json.JSONDecodeError, KeyError, ValueError) as e:
                last = e
                time.sleep(0.2 * 2 ** attempt)
        raise TransportError(
            f"teacher at {self.url} failed after {self.retries} attempts: {last}") from last

    def predict(self, images):
        images = np.asarray(images, dtype=np.float64)
        out = []
        for start in range(0, images.shape[0], self.batch_limit):
            out.append(self._post_chunk(images[start:start + self.batch_limit]))
        return np.concatenate(out, axis=0)


def open_teacher(local_checkpoint=None, remote_url=None, **remote_kwargs):
    if (local_checkpoint is None) == (remote_url is None):
        raise InputError("specify exactly one of local checkpoint or remote url")
    if local_checkpoint is not None:
        return LocalTeacher(nn.load_model(local_checkpoint))
    return RemoteTeacher(remote_url, **remote_kwargs)


def query(teacher, images, ledger, round_index=0):
    """Soft labels for a batch, metered: ledger grows by exactly len(images).

    The ledger is only updated once the full batch of labels is in hand, so
    a mid-batch transport failure leaves it unchanged.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.shape[0] == 0:
        raise InputError("query needs a non-empty batch")
    if images.shape[1:] != tuple(teacher.input_shape):
        raise InputError(
            f"image shape {images.shape[1:]} does not match teacher input {teacher.input_shape}")
    labels = teacher.predict(images)
    if np.any(np.abs(labels.sum(axis=1) - 1.0) > 1e-6) or np.any(labels < -1e-9):
        raise ProtocolError("teacher returned non-stochastic label rows")
    ledger.record(round_index, images.shape[0])
    return labels


def to_hard(labels):
    """Argmax class per soft label; ties go to the lowest class index."""
    return np.asarray(labels).argmax(axis=1)

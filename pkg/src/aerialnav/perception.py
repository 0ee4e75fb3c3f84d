"""Open-vocabulary perception port and its backends.

A backend turns one view into a :class:`PerceptionResult`: detections
(caption, box, confidence) plus a label mask aligned with the view. The
oracle backend copies the renderer's labels; the mock backend replays canned
detections; the remote backend forwards to an external service.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, PerceptionBackendError
from .geometry import DepthView, fuse_panorama, project_view

DEFAULT_THETA = 0.4


@dataclass(frozen=True)
class Detection:
    caption: str
    bbox: tuple
    confidence: float

    def __post_init__(self):
        u0, v0, u1, v1 = self.bbox
        if u0 > u1 or v0 > v1:
            raise InvalidArgumentError(f"degenerate bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidArgumentError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class PerceptionResult:
    detections: list
    semantic: np.ndarray
    label_table: dict = field(default_factory=dict)

    def __post_init__(self):
        present = set(np.unique(self.semantic).tolist()) - {0}
        missing = present - set(self.label_table)
        if missing:
            raise InvalidArgumentError(f"mask labels {sorted(missing)} missing from label_table")

    def __eq__(self, other):
        return (
            isinstance(other, PerceptionResult)
            and self.detections == other.detections
            and self.label_table == other.label_table
            and np.array_equal(self.semantic, other.semantic)
        )


class PerceptionBackend:
    """Base for perception backends; subclasses implement :meth:`_detect`."""

    name = "base"

    def __init__(self, theta=DEFAULT_THETA):
        self.theta = float(theta)

    def perceive(self, view_ref, view_depth):
        result = self._detect(view_ref, view_depth)
        return self._filter(result)

    def _detect(self, view_ref, view_depth):
        raise NotImplementedError

    def _filter(self, result):
        kept = [d for d in result.detections if d.confidence >= self.theta]
        keep_caps = {d.caption for d in kept}
        keep_ids = [k for k, v in result.label_table.items() if v in keep_caps]
        mask = np.where(np.isin(result.semantic, keep_ids), result.semantic, 0)
        return PerceptionResult(kept, mask, dict(result.label_table))

    def perceive_panorama(self, views, intrinsics, pose):
        """Perceive every view and fuse the labeled points.

        Returns ``(detections, cloud)``; detections are concatenated over
        views in offset order.
        """
        detections = []
        clouds = []
        for view in views:
            res = self.perceive(view, view)
            detections.extend(res.detections)
            labeled = DepthView(view.depth, res.semantic, view.view_offset)
            clouds.append(project_view(labeled, intrinsics, pose, res.label_table))
        return detections, fuse_panorama(clouds)


class OraclePerception(PerceptionBackend):
    """Ground truth from the renderer's label channel, confidence fixed at 1."""

    name = "oracle"

    def __init__(self, label_table, theta=DEFAULT_THETA):
        super().__init__(theta)
        self.label_table = dict(label_table)

    def _detect(self, view_ref, view_depth):
        labels = np.asarray(view_ref.semantic)
        dets = []
        for lab in np.unique(labels):
            if lab == 0:
                continue
            vs, us = np.nonzero(labels == lab)
            bbox = (int(us.min()), int(vs.min()), int(us.max()), int(vs.max()))
            dets.append(Detection(self.label_table[int(lab)], bbox, 1.0))
        return PerceptionResult(dets, labels.copy(), dict(self.label_table))


class MockPerception(PerceptionBackend):
    """Replays canned detections; each masks its bbox where depth is valid.

    ``canned`` is a list of ``(caption, bbox, confidence)``.
    """

    name = "mock"

    def __init__(self, canned, theta=DEFAULT_THETA):
        super().__init__(theta)
        self.canned = [Detection(c, tuple(b), float(p)) for c, b, p in canned]
        self.label_table = {}
        for d in self.canned:
            if d.caption not in self.label_table.values():
                self.label_table[len(self.label_table) + 1] = d.caption

    def _detect(self, view_ref, view_depth):
        shape = np.asarray(view_depth.depth).shape
        mask = np.zeros(shape, dtype=np.int64)
        ids = {v: k for k, v in self.label_table.items()}
        for d in sorted(self.canned, key=lambda d: d.confidence):
            u0, v0, u1, v1 = d.bbox
            mask[v0 : v1 + 1, u0 : u1 + 1] = ids[d.caption]
        mask[np.asarray(view_depth.depth) <= 0] = 0
        return PerceptionResult(list(self.canned), mask, dict(self.label_table))


class RemotePerception(PerceptionBackend):
    """Client for an external caption/ground/segment service.

    ``transport(payload) -> dict`` must return ``{"detections": [...],
    "semantic": [[...]], "label_table": {...}}``. Without a transport the
    backend reports itself unavailable.
    """

    name = "remote"

    def __init__(self, transport=None, theta=DEFAULT_THETA):
        super().__init__(theta)
        self.transport = transport

    def _detect(self, view_ref, view_depth):
        if self.transport is None:
            raise PerceptionBackendError(self.name, "no transport configured")
        try:
            reply = self.transport({"view": view_ref, "shape": list(np.asarray(view_depth.depth).shape)})
            dets = [Detection(d["caption"], tuple(d["bbox"]), float(d["confidence"])) for d in reply["detections"]]
            table = {int(k): v for k, v in reply["label_table"].items()}
            return PerceptionResult(dets, np.asarray(reply["semantic"], dtype=np.int64), table)
        except PerceptionBackendError:
            raise
        except Exception as exc:
            raise PerceptionBackendError(self.name, f"bad reply: {exc}") from exc


def ground_caption(cloud, caption):
    """Mean position of cloud points labeled ``caption``, or None."""
    pts = cloud.select(caption)
    if len(pts) == 0:
        return None
    return pts.mean(axis=0)


def make_perception(backend, theta=DEFAULT_THETA, label_table=None, canned=None, transport=None):
    if backend == "oracle":
        return OraclePerception(label_table or {}, theta)
    if backend == "mock":
        return MockPerception(canned or [], theta)
    if backend == "remote":
        return RemotePerception(transport, theta)
    raise InvalidArgumentError(f"unknown perception backend {backend!r}")

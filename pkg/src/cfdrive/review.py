"""Human review service: serves scenes, verdicts and QA items, records decisions.

State is a pure fold over an append-only JSONL decision log; every accepted
POST is written (and flushed) to the log before it is acknowledged, so a
restart rebuilds identical state. Optimistic concurrency: each item carries
a revision counter and a decision must quote the revision it reviewed.
"""

from __future__ import annotations

import json
import os
import threading
from collections import Counter
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .checklist import CounterfactualVerdict, ViolationKind
from .promptqa import QAItem, parse_trajectory, read_qa_jsonl
from .scene import Scene, ego_xy, load_scene, to_ego_frame

VERDICTS = ("accept", "reject", "edit")


class ReviewDecision(BaseModel):
    item_id: str
    revision: int
    verdict: str = Field(pattern="^(accept|reject|edit)$")
    edited_text: str | None = None
    gap_tags: list[str] = Field(default_factory=list)
    note: str = ""
    reviewer: str = "anonymous"


@dataclass(frozen=True)
class VerdictRecord:
    scene_id: str
    trajectory_id: str
    role: str
    trajectory_text: str
    verdict: CounterfactualVerdict

    @classmethod
    def from_dict(cls, doc: dict) -> "VerdictRecord":
        return cls(
            scene_id=doc["scene_id"],
            trajectory_id=doc["trajectory_id"],
            role=doc.get("role", "simulated"),
            trajectory_text=doc.get("trajectory", ""),
            verdict=CounterfactualVerdict.from_dict(doc),
        )


def read_verdict_records(path) -> list[VerdictRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(VerdictRecord.from_dict(json.loads(line)))
    return out


class ReviewStore:
    """QA items + verdicts + scenes, with an append-only review log."""

    def __init__(
        self,
        items: list[QAItem],
        verdicts: list[VerdictRecord],
        scenes: dict[str, Scene],
        log_path,
    ):
        self.items: dict[str, QAItem] = {}
        for item in items:
            if item.id in self.items:
                raise ValueError(f"duplicate QA item id {item.id!r}")
            self.items[item.id] = item
        self.revisions: dict[str, int] = {item_id: 0 for item_id in self.items}
        self.verdicts = verdicts
        self.scenes = scenes
        self.gap_tags: Counter = Counter()
        self.log_path = Path(log_path)
        self._lock = threading.Lock()
        if self.log_path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self.log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._apply_state(json.loads(line))

    def _apply_state(self, doc: dict) -> int:
        item_id = doc["item_id"]
        item = self.items[item_id]
        verdict = doc["verdict"]
        if verdict == "accept":
            item = replace(item, review_state="accepted", edited_answer=None)
        elif verdict == "reject":
            item = replace(item, review_state="rejected", edited_answer=None)
        else:
            item = replace(item, review_state="edited", edited_answer=doc.get("edited_text") or "")
        self.items[item_id] = item
        self.revisions[item_id] += 1
        for tag in doc.get("gap_tags", []):
            self.gap_tags[tag] += 1
        return self.revisions[item_id]

    def apply(self, decision: ReviewDecision) -> int:
        """Validate, write-ahead to the log, then mutate state. Returns the new revision."""
        with self._lock:
            if decision.item_id not in self.items:
                raise KeyError(decision.item_id)
            current = self.revisions[decision.item_id]
            if decision.revision != current:
                raise RevisionConflict(current)
            if decision.verdict == "edit" and not decision.edited_text:
                raise ValueError("edit decisions need edited_text")
            doc = decision.model_dump()
            doc["timestamp"] = datetime.now(timezone.utc).isoformat()
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(doc, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            return self._apply_state(doc)

    def stats(self) -> dict:
        states = Counter(item.review_state for item in self.items.values())
        return {
            "total": len(self.items),
            "pending": states.get("pending", 0),
            "accepted": states.get("accepted", 0),
            "rejected": states.get("rejected", 0),
            "edited": states.get("edited", 0),
            "gap_tags": dict(sorted(self.gap_tags.items())),
        }

    def scene_ids(self) -> list[str]:
        ids = set(self.scenes)
        ids.update(v.scene_id for v in self.verdicts)
        ids.update(item.provenance.scene_id for item in self.items.values())
        return sorted(ids)

    def scene_payload(self, scene_id: str) -> dict:
        """Everything the UI needs to draw one scene, in the ego frame."""
        if scene_id not in self.scenes:
            raise KeyError(scene_id)
        scene = self.scenes[scene_id]
        lanes = [
            {"id": lane.id, "polyline": [list(ego_xy(scene, x, y)) for x, y in lane.polyline]}
            for lane in scene.lanes
        ]
        drivable = {
            "outer": [[list(ego_xy(scene, x, y)) for x, y in ring] for ring in scene.drivable.outer],
            "holes": [[list(ego_xy(scene, x, y)) for x, y in ring] for ring in scene.drivable.holes],
        }
        agents = []
        for agent in scene.agents:
            pose = to_ego_frame(scene, agent.pose_at(scene.key_time))
            agents.append(
                {
                    "id": agent.id,
                    "category": agent.category,
                    "x": pose.x,
                    "y": pose.y,
                    "yaw": pose.yaw,
                    "length": agent.length,
                    "width": agent.width,
                }
            )
        trajectories = []
        for record in self.verdicts:
            if record.scene_id != scene_id:
                continue
            waypoints = []
            if record.trajectory_text:
                traj = parse_trajectory(record.trajectory_text)
                waypoints = [[w.t, w.x, w.y] for w in traj.waypoints]
            trajectories.append(
                {
                    "trajectory_id": record.trajectory_id,
                    "role": record.role,
                    "decision": record.verdict.decision.decision_string(),
                    "safe": record.verdict.safe,
                    "categories": sorted(record.verdict.categories()),
                    "waypoints": waypoints,
                    "violations": [v.to_dict() for v in record.verdict.violations],
                }
            )
        return {
            "scene_id": scene_id,
            "caption": scene.caption,
            "ego": {"length": scene.ego_length, "width": scene.ego_width},
            "lanes": lanes,
            "drivable": drivable,
            "agents": agents,
            "trajectories": trajectories,
            "violation_kinds": [k.value for k in ViolationKind],
        }

    def qa_for_scene(self, scene_id: str) -> list[dict]:
        out = []
        for item_id in sorted(self.items):
            item = self.items[item_id]
            if item.provenance.scene_id == scene_id:
                doc = item.to_dict()
                doc["revision"] = self.revisions[item_id]
                out.append(doc)
        return out


class RevisionConflict(Exception):
    def __init__(self, current: int):
        self.current = current
        super().__init__(f"stale revision, current is {current}")


def export_reviewed(store: ReviewStore, out_path, gaps_path=None) -> tuple[int, dict]:
    """Write accepted and edited items (edits applied); returns (count, gap summary)."""
    exported = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for item_id in sorted(store.items):
            item = store.items[item_id]
            if item.review_state not in ("accepted", "edited"):
                continue
            doc = item.to_dict()
            doc["answer"] = item.final_answer()
            doc.pop("edited_answer", None)
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
            exported += 1
    summary = dict(sorted(store.gap_tags.items()))
    if gaps_path is not None:
        with open(gaps_path, "w", encoding="utf-8") as fh:
            json.dump({"gap_tags": summary}, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return exported, summary


def load_store(qa_path, verdicts_path, scenes_dir, log_path) -> ReviewStore:
    items = read_qa_jsonl(qa_path) if qa_path and Path(qa_path).exists() else []
    verdicts = (
        read_verdict_records(verdicts_path) if verdicts_path and Path(verdicts_path).exists() else []
    )
    scenes: dict[str, Scene] = {}
    if scenes_dir and Path(scenes_dir).is_dir():
        for path in sorted(Path(scenes_dir).glob("*.json")):
            scene = load_scene(path)
            scenes[scene.scene_id] = scene
    return ReviewStore(items, verdicts, scenes, log_path)


def create_app(store: ReviewStore, ui_dir=None, cors_origins: list[str] | None = None) -> FastAPI:
    app = FastAPI(title="cfdrive review service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def malformed_body(_request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"detail": "malformed body", "errors": exc.errors()},
        )

    @app.get("/scenes")
    def scenes_index():
        out = []
        for scene_id in store.scene_ids():
            qa = store.qa_for_scene(scene_id)
            out.append(
                {
                    "id": scene_id,
                    "qa_total": len(qa),
                    "qa_pending": sum(1 for q in qa if q["review_state"] == "pending"),
                    "trajectories": sum(1 for v in store.verdicts if v.scene_id == scene_id),
                }
            )
        return {"scenes": out}

    @app.get("/scenes/{scene_id}")
    def scene_detail(scene_id: str):
        try:
            return store.scene_payload(scene_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown scene {scene_id!r}")

    @app.get("/scenes/{scene_id}/qa")
    def scene_qa(scene_id: str):
        return {"items": store.qa_for_scene(scene_id)}

    @app.post("/reviews")
    def post_review(decision: ReviewDecision, request: Request):
        if decision.reviewer == "anonymous":
            decision.reviewer = request.headers.get("X-Reviewer", "anonymous")
        try:
            revision = store.apply(decision)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {decision.item_id!r}")
        except RevisionConflict as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        item = store.items[decision.item_id]
        return {
            "item_id": decision.item_id,
            "revision": revision,
            "review_state": item.review_state,
        }

    @app.get("/stats")
    def stats():
        return store.stats()

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app

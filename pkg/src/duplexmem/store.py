"""Identity-keyed long-term memory store.

Profiles are keyed by synthetic user ids and carry the face/voice keys used
for verification, timestamped facts and dialog summaries, a sparse persona
over a fixed slot schema, and a version counter. The social graph is a set of
directed relation triplets whose endpoints must exist; neighborhood queries
treat edges as undirected. Writes are serialized under a lock and always
replace whole profile snapshots, so readers never observe partial updates
and a snapshot handed out earlier never mutates.

Persistence is a directory: a versioned JSON manifest, a binary sidecar with
the raw float32 embeddings (checksummed from the manifest), and an
append-only JSONL audit log. All three are written atomically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .persona import DEFAULT_PERSONA_SLOTS
from .verification import Embedding, cosine_distance

logger = logging.getLogger(__name__)

UNKNOWN_USER_NAME = "unknown_user"

STORE_FORMAT = "memory-store/1"
_MANIFEST_FILE = "store.json"
_EMBEDDINGS_FILE = "embeddings.bin"
_AUDIT_FILE = "audit.log"


class StoreError(Exception):
    pass


class UnknownUserError(StoreError):
    pass


class StaleResolutionError(StoreError):
    """The resolution was computed against an outdated profile version."""


class DuplicateEdgeEndpointError(StoreError):
    pass


class PersonaSchemaError(StoreError):
    pass


class ReplacementIntegrityError(StoreError):
    """A replacement cites an item that does not exist at the base version."""


class StoreChecksumError(StoreError):
    """Persisted embedding sidecar does not match its manifest checksum."""


@dataclass(frozen=True)
class MemoryItem:
    text: str
    timestamp: str

    def __post_init__(self) -> None:
        if not self.text:
            raise StoreError("memory items carry non-empty text")


@dataclass(frozen=True)
class RelationTriplet:
    from_user: str
    relation: str
    to_user: str

    def __post_init__(self) -> None:
        if not self.from_user or not self.to_user or not self.relation:
            raise StoreError("relation triplets need both endpoints and a label")
        if self.from_user == self.to_user:
            raise StoreError("relation triplets cannot be self loops")


@dataclass(frozen=True)
class ExtractedMemory:
    """What one session contributed, as produced by the extraction backend."""

    summary_sentences: tuple[str, ...] = ()
    user_facts: tuple[str, ...] = ()
    persona_trail: Mapping[str, str] = field(default_factory=dict)
    user_name: str = UNKNOWN_USER_NAME
    relation_facts: tuple[tuple[str, str], ...] = ()  # (relation, other user's name)
    session_timestamp: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "summary_sentences", tuple(self.summary_sentences))
        object.__setattr__(self, "user_facts", tuple(self.user_facts))
        object.__setattr__(self, "persona_trail", dict(self.persona_trail))
        object.__setattr__(self, "relation_facts", tuple(map(tuple, self.relation_facts)))

    @property
    def is_valid(self) -> bool:
        return bool(self.summary_sentences or self.user_facts)

    def to_payload(self) -> dict[str, Any]:
        return {
            "summary_sentences": list(self.summary_sentences),
            "user_facts": list(self.user_facts),
            "persona_trail": dict(self.persona_trail),
            "user_name": self.user_name,
            "relation_facts": [list(pair) for pair in self.relation_facts],
            "session_timestamp": self.session_timestamp,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "ExtractedMemory":
        return cls(
            summary_sentences=tuple(payload.get("summary_sentences", ())),
            user_facts=tuple(payload.get("user_facts", ())),
            persona_trail=dict(payload.get("persona_trail", {})),
            user_name=payload.get("user_name", UNKNOWN_USER_NAME),
            relation_facts=tuple((r, n) for r, n in payload.get("relation_facts", ())),
            session_timestamp=payload.get("session_timestamp", ""),
        )


@dataclass(frozen=True)
class PersonaReplacement:
    slot: str
    old_value: str
    new_value: str
    reason: str


@dataclass(frozen=True)
class UpdateResolution:
    """A reviewed set of profile changes, pinned to a base version."""

    target_user: str
    base_version: int
    fact_appends: tuple[MemoryItem, ...] = ()
    summary_appends: tuple[MemoryItem, ...] = ()
    persona_updates: Mapping[str, str] = field(default_factory=dict)
    replacements: tuple[PersonaReplacement, ...] = ()
    new_edges: tuple[RelationTriplet, ...] = ()
    unresolved_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "fact_appends", tuple(self.fact_appends))
        object.__setattr__(self, "summary_appends", tuple(self.summary_appends))
        object.__setattr__(self, "persona_updates", dict(self.persona_updates))
        object.__setattr__(self, "replacements", tuple(self.replacements))
        object.__setattr__(self, "new_edges", tuple(self.new_edges))
        object.__setattr__(self, "unresolved_names", tuple(self.unresolved_names))

    def to_payload(self) -> dict[str, Any]:
        return {
            "target_user": self.target_user,
            "base_version": self.base_version,
            "fact_appends": [{"text": i.text, "timestamp": i.timestamp} for i in self.fact_appends],
            "summary_appends": [
                {"text": i.text, "timestamp": i.timestamp} for i in self.summary_appends
            ],
            "persona_updates": dict(self.persona_updates),
            "replacements": [
                {"slot": r.slot, "old": r.old_value, "new": r.new_value, "reason": r.reason}
                for r in self.replacements
            ],
            "new_edges": [[e.from_user, e.relation, e.to_user] for e in self.new_edges],
            "unresolved_names": list(self.unresolved_names),
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "UpdateResolution":
        return cls(
            target_user=payload["target_user"],
            base_version=int(payload["base_version"]),
            fact_appends=tuple(
                MemoryItem(i["text"], i["timestamp"]) for i in payload.get("fact_appends", ())
            ),
            summary_appends=tuple(
                MemoryItem(i["text"], i["timestamp"]) for i in payload.get("summary_appends", ())
            ),
            persona_updates=dict(payload.get("persona_updates", {})),
            replacements=tuple(
                PersonaReplacement(r["slot"], r["old"], r["new"], r["reason"])
                for r in payload.get("replacements", ())
            ),
            new_edges=tuple(
                RelationTriplet(f, r, t) for f, r, t in payload.get("new_edges", ())
            ),
            unresolved_names=tuple(payload.get("unresolved_names", ())),
        )


@dataclass(frozen=True)
class UserProfile:
    """Immutable snapshot of one user's memory."""

    user_id: str
    face_key: Embedding
    voice_key: Embedding
    name: str = UNKNOWN_USER_NAME
    facts: tuple[MemoryItem, ...] = ()
    dialog_summaries: tuple[MemoryItem, ...] = ()
    persona: Mapping[str, str] = field(default_factory=dict)
    relation_edges: tuple[RelationTriplet, ...] = ()
    version: int = 1

    def __post_init__(self) -> None:
        if self.face_key.modality != "face" or self.voice_key.modality != "voice":
            raise StoreError("profile keys must be a face and a voice embedding")
        if self.version < 1:
            raise StoreError("profile versions start at 1")
        object.__setattr__(self, "facts", tuple(self.facts))
        object.__setattr__(self, "dialog_summaries", tuple(self.dialog_summaries))
        object.__setattr__(self, "persona", dict(self.persona))
        object.__setattr__(self, "relation_edges", tuple(self.relation_edges))

    def to_payload(self) -> dict[str, Any]:
        """JSON form without the embedding keys (those ride the sidecar)."""
        return {
            "user_id": self.user_id,
            "name": self.name,
            "version": self.version,
            "facts": [{"text": i.text, "timestamp": i.timestamp} for i in self.facts],
            "dialog_summaries": [
                {"text": i.text, "timestamp": i.timestamp} for i in self.dialog_summaries
            ],
            "persona": dict(self.persona),
            "relation_edges": [
                [e.from_user, e.relation, e.to_user] for e in self.relation_edges
            ],
        }


class MemoryStore:
    """The writer-serialized profile and relation-graph store."""

    def __init__(self, persona_slots: Sequence[str] = DEFAULT_PERSONA_SLOTS):
        if len(persona_slots) != len(set(persona_slots)) or not persona_slots:
            raise PersonaSchemaError("persona slots must be unique and non-empty")
        self._persona_slots = tuple(persona_slots)
        self._lock = threading.RLock()
        self._users: dict[str, UserProfile] = {}
        self._edges: dict[tuple[str, str, str], RelationTriplet] = {}
        self._aux: list[str] = []
        self._audit: list[dict[str, Any]] = []
        self._store_version = 0
        self._next_user = 1

    # -- read side -------------------------------------------------------

    @property
    def store_version(self) -> int:
        return self._store_version

    @property
    def persona_slots(self) -> tuple[str, ...]:
        return self._persona_slots

    @property
    def user_ids(self) -> tuple[str, ...]:
        with self._lock:
            return tuple(sorted(self._users))

    @property
    def aux_documents(self) -> tuple[str, ...]:
        with self._lock:
            return tuple(self._aux)

    @property
    def audit_entries(self) -> tuple[Mapping[str, Any], ...]:
        with self._lock:
            return tuple(self._audit)

    def lookup_user(self, user_id: str) -> UserProfile:
        with self._lock:
            profile = self._users.get(user_id)
            if profile is None:
                raise UnknownUserError(f"no user {user_id!r}")
            return replace(profile, relation_edges=self._edges_of(user_id))

    def user_keys(self, modality: str) -> list[tuple[str, Embedding]]:
        """(user_id, key) pairs for one modality, sorted by user id."""
        if modality not in ("face", "voice"):
            raise StoreError(f"no stored keys for modality {modality!r}")
        with self._lock:
            attr = "face_key" if modality == "face" else "voice_key"
            return [(uid, getattr(self._users[uid], attr)) for uid in sorted(self._users)]

    def name_directory(self) -> dict[str, str]:
        """Map from display name to user id, skipping unknown and ambiguous names."""
        with self._lock:
            counts: dict[str, int] = {}
            for profile in self._users.values():
                if profile.name != UNKNOWN_USER_NAME:
                    counts[profile.name] = counts.get(profile.name, 0) + 1
            return {
                profile.name: uid
                for uid, profile in sorted(self._users.items())
                if profile.name != UNKNOWN_USER_NAME and counts[profile.name] == 1
            }

    def connected_users(self, user_id: str) -> list[tuple[str, str]]:
        """Graph neighbors of a user with their relation labels.

        Edges are stored directed but neighborhoods are undirected: an edge in
        either direction makes the other endpoint a neighbor. Sorted by
        (neighbor id, relation).
        """
        with self._lock:
            if user_id not in self._users:
                raise UnknownUserError(f"no user {user_id!r}")
            pairs: set[tuple[str, str]] = set()
            for edge in self._edges.values():
                if edge.from_user == user_id:
                    pairs.add((edge.to_user, edge.relation))
                elif edge.to_user == user_id:
                    pairs.add((edge.from_user, edge.relation))
            return sorted(pairs)

    def _edges_of(self, user_id: str) -> tuple[RelationTriplet, ...]:
        return tuple(
            edge
            for edge in self._edges.values()
            if user_id in (edge.from_user, edge.to_user)
        )

    # -- write side ------------------------------------------------------

    def create_user(
        self,
        face_key: Embedding,
        voice_key: Embedding,
        initial: ExtractedMemory,
        timestamp: str = "",
    ) -> str:
        """Create a profile from a first session. Duplicate identities (an
        existing profile with an identical key) are allowed but logged."""
        ts = timestamp or initial.session_timestamp
        with self._lock:
            self._validate_persona(initial.persona_trail)
            for uid, profile in sorted(self._users.items()):
                if (
                    cosine_distance(face_key, profile.face_key) == 0.0
                    or cosine_distance(voice_key, profile.voice_key) == 0.0
                ):
                    logger.warning("new profile duplicates identity keys of %s", uid)
                    self._audit.append(
                        {"action": "duplicate_identity_warning", "existing_user": uid}
                    )
                    break
            user_id = f"user_{self._next_user:04d}"
            self._next_user += 1
            profile = UserProfile(
                user_id=user_id,
                face_key=face_key,
                voice_key=voice_key,
                name=initial.user_name or UNKNOWN_USER_NAME,
                facts=tuple(MemoryItem(t, ts) for t in initial.user_facts),
                dialog_summaries=tuple(MemoryItem(t, ts) for t in initial.summary_sentences),
                persona=dict(initial.persona_trail),
                version=1,
            )
            self._users[user_id] = profile
            self._store_version += 1
            self._audit.append(
                {
                    "action": "create_user",
                    "user_id": user_id,
                    "name": profile.name,
                    "timestamp": ts,
                    "store_version": self._store_version,
                }
            )
            return user_id

    def apply_profile_update(self, user_id: str, resolution: UpdateResolution) -> int:
        """Apply a reviewed resolution; returns the new profile version.

        Rejects resolutions computed against a stale version. Replacements
        must cite the live persona value; every change lands in the audit log
        with old value, new value, and reason. Relation edges in the
        resolution are NOT applied here (see update_social_graph in the
        pipeline), keeping profile writes and graph writes separable.
        """
        with self._lock:
            profile = self._users.get(user_id)
            if profile is None:
                raise UnknownUserError(f"no user {user_id!r}")
            if resolution.target_user != user_id:
                raise StoreError(
                    f"resolution targets {resolution.target_user!r}, not {user_id!r}"
                )
            if resolution.base_version != profile.version:
                raise StaleResolutionError(
                    f"resolution base version {resolution.base_version} does not match "
                    f"live version {profile.version}"
                )
            self._validate_persona(resolution.persona_updates)
            persona = dict(profile.persona)
            for rep in resolution.replacements:
                if rep.slot not in self._persona_slots:
                    raise PersonaSchemaError(f"unknown persona slot {rep.slot!r}")
                if persona.get(rep.slot) != rep.old_value:
                    raise ReplacementIntegrityError(
                        f"replacement for {rep.slot!r} cites {rep.old_value!r} but the live "
                        f"value is {persona.get(rep.slot)!r}"
                    )
                persona[rep.slot] = rep.new_value
                self._audit.append(
                    {
                        "action": "replace_persona",
                        "user_id": user_id,
                        "slot": rep.slot,
                        "old": rep.old_value,
                        "new": rep.new_value,
                        "reason": rep.reason,
                    }
                )
            for slot, value in resolution.persona_updates.items():
                current = persona.get(slot)
                if current is not None and current != value:
                    raise ReplacementIntegrityError(
                        f"persona update for {slot!r} would overwrite {current!r}; "
                        "conflicting values must arrive as replacements"
                    )
                persona[slot] = value
            new_version = profile.version + 1
            updated = replace(
                profile,
                facts=profile.facts + resolution.fact_appends,
                dialog_summaries=profile.dialog_summaries + resolution.summary_appends,
                persona=persona,
                version=new_version,
            )
            self._users[user_id] = updated
            self._store_version += 1
            self._audit.append(
                {
                    "action": "apply_update",
                    "user_id": user_id,
                    "facts_appended": len(resolution.fact_appends),
                    "summaries_appended": len(resolution.summary_appends),
                    "persona_set": sorted(resolution.persona_updates),
                    "replacements": len(resolution.replacements),
                    "from_version": profile.version,
                    "to_version": new_version,
                    "store_version": self._store_version,
                }
            )
            return new_version

    def add_relation_edge(self, triplet: RelationTriplet) -> bool:
        """Insert an edge; returns False when it already exists (idempotent)."""
        key = (triplet.from_user, triplet.relation, triplet.to_user)
        with self._lock:
            for endpoint in (triplet.from_user, triplet.to_user):
                if endpoint not in self._users:
                    raise UnknownUserError(f"edge endpoint {endpoint!r} does not exist")
            if key in self._edges:
                return False
            self._edges[key] = triplet
            self._store_version += 1
            self._audit.append(
                {
                    "action": "add_edge",
                    "edge": list(key),
                    "store_version": self._store_version,
                }
            )
            return True

    def add_aux_document(self, text: str) -> None:
        if not text:
            raise StoreError("aux documents carry non-empty text")
        with self._lock:
            self._aux.append(text)
            self._store_version += 1

    def _validate_persona(self, mapping: Mapping[str, str]) -> None:
        for slot in mapping:
            if slot not in self._persona_slots:
                raise PersonaSchemaError(f"unknown persona slot {slot!r}")

    # -- equality (used by persistence round-trip checks) ----------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryStore):
            return NotImplemented
        with self._lock, other._lock:
            return (
                self._persona_slots == other._persona_slots
                and self._users == other._users
                and set(self._edges) == set(other._edges)
                and self._aux == other._aux
                and self._store_version == other._store_version
                and self._next_user == other._next_user
                and self._audit == other._audit
            )

    __hash__ = None  # type: ignore[assignment]

    # -- persistence -----------------------------------------------------

    def persist(self, path: str) -> None:
        """Write the store to a directory (manifest, sidecar, audit log).

        Each file is written to a temp name and atomically renamed, so a
        crashed persist never corrupts an older copy. Concurrent persists
        serialize on the writer lock; the last one wins and both are audited.
        """
        with self._lock:
            self._audit.append(
                {"action": "persist", "path": str(path), "store_version": self._store_version}
            )
            os.makedirs(path, exist_ok=True)
            blocks: list[bytes] = []
            offsets: dict[str, dict[str, Any]] = {}
            cursor = 0
            for uid in sorted(self._users):
                profile = self._users[uid]
                entry: dict[str, Any] = {}
                for kind, emb in (("face", profile.face_key), ("voice", profile.voice_key)):
                    raw = emb.values.astype("<f4").tobytes()
                    entry[kind] = {"offset": cursor, "dim": emb.dim}
                    blocks.append(raw)
                    cursor += len(raw)
                offsets[uid] = entry
            sidecar = b"".join(blocks)
            checksum = hashlib.sha256(sidecar).hexdigest()
            manifest = {
                "format": STORE_FORMAT,
                "store_version": self._store_version,
                "next_user": self._next_user,
                "persona_slots": list(self._persona_slots),
                "users": {
                    uid: {**self._users[uid].to_payload(), "keys": offsets[uid]}
                    for uid in sorted(self._users)
                },
                "edges": sorted(list(key) for key in self._edges),
                "aux": list(self._aux),
                "embeddings_file": _EMBEDDINGS_FILE,
                "embeddings_sha256": checksum,
            }
            audit_text = "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in self._audit)
            _atomic_write(os.path.join(path, _EMBEDDINGS_FILE), sidecar)
            _atomic_write(os.path.join(path, _AUDIT_FILE), audit_text.encode("utf-8"))
            _atomic_write(
                os.path.join(path, _MANIFEST_FILE),
                json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8"),
            )

    @classmethod
    def load(cls, path: str) -> "MemoryStore":
        manifest_path = os.path.join(path, _MANIFEST_FILE)
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("format") != STORE_FORMAT:
            raise StoreError(f"unsupported store format {manifest.get('format')!r}")
        with open(os.path.join(path, manifest["embeddings_file"]), "rb") as fh:
            sidecar = fh.read()
        if hashlib.sha256(sidecar).hexdigest() != manifest["embeddings_sha256"]:
            raise StoreChecksumError("embedding sidecar does not match its manifest checksum")

        store = cls(persona_slots=tuple(manifest["persona_slots"]))
        for uid, record in manifest["users"].items():
            keys = {}
            for kind in ("face", "voice"):
                meta = record["keys"][kind]
                start, dim = meta["offset"], meta["dim"]
                end = start + dim * 4
                if end > len(sidecar):
                    raise StoreChecksumError("embedding sidecar is truncated")
                vec = np.frombuffer(sidecar[start:end], dtype="<f4").copy()
                keys[kind] = Embedding(vec, kind)  # type: ignore[arg-type]
            profile = UserProfile(
                user_id=uid,
                face_key=keys["face"],
                voice_key=keys["voice"],
                name=record["name"],
                facts=tuple(MemoryItem(i["text"], i["timestamp"]) for i in record["facts"]),
                dialog_summaries=tuple(
                    MemoryItem(i["text"], i["timestamp"]) for i in record["dialog_summaries"]
                ),
                persona=dict(record["persona"]),
                version=record["version"],
            )
            store._users[uid] = profile
        for f, r, t in manifest["edges"]:
            store._edges[(f, r, t)] = RelationTriplet(f, r, t)
        store._aux = list(manifest["aux"])
        store._store_version = manifest["store_version"]
        store._next_user = manifest["next_user"]
        audit_path = os.path.join(path, _AUDIT_FILE)
        if os.path.exists(audit_path):
            with open(audit_path, "r", encoding="utf-8") as fh:
                store._audit = [json.loads(line) for line in fh if line.strip()]
        return store


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def seed_profile(
    store: MemoryStore,
    face_key: Embedding,
    voice_key: Embedding,
    name: str,
    facts: Iterable[tuple[str, str]] = (),
    summaries: Iterable[tuple[str, str]] = (),
    persona: Mapping[str, str] | None = None,
) -> str:
    """Convenience used by the harness to pre-seed known users."""
    initial = ExtractedMemory(
        summary_sentences=(),
        user_facts=(),
        persona_trail=persona or {},
        user_name=name,
    )
    user_id = store.create_user(face_key, voice_key, initial)
    fact_items = tuple(MemoryItem(text, ts) for text, ts in facts)
    summary_items = tuple(MemoryItem(text, ts) for text, ts in summaries)
    if fact_items or summary_items:
        profile = store.lookup_user(user_id)
        store.apply_profile_update(
            user_id,
            UpdateResolution(
                target_user=user_id,
                base_version=profile.version,
                fact_appends=fact_items,
                summary_appends=summary_items,
            ),
        )
    return user_id

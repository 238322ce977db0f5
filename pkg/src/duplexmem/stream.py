"""17-channel full-duplex token streams.

Each step carries one text token (the model's running monologue) plus 8
listening and 8 speaking audio tokens, at 12.5 steps per second. Steps
[0, 512) are reserved for the profile context window and [512, 768) for the
retrieval context window; dialog content starts at step 768. Reserved regions
carry pad text and empty audio in every built stream.

Text tokens are byte-level: id 0 is the pad, id b+1 encodes byte b. Audio
tokens are opaque synthetic ids: 0 is silence, 1 is the assistant voice, and
ids >= 2 mark which user produced an utterance, which is what the session
tagger and the verification mocks key on.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, replace
from typing import Any, Callable, Iterable, Literal, Mapping, Sequence

import numpy as np

from .retrieval import QueryGroups, format_query_protocol

FRAME_RATE = 12.5
MAX_STREAM_STEPS = 8192
PROFILE_REGION = (0, 512)
RETRIEVAL_REGION = (512, 768)
DIALOG_START = RETRIEVAL_REGION[1]
CHANNELS = 17  # 1 text + 8 listen + 8 speak
LISTEN_SLOTS = slice(1, 9)
SPEAK_SLOTS = slice(9, 17)

TEXT_PAD = 0
AUDIO_EMPTY = 0
ASSISTANT_VOICE = 1
SPEAKER_MARKER_BASE = 2

# Monologue text for a response starts this many steps before its audio.
MONOLOGUE_LEAD_STEPS = 2

STREAM_MAGIC = b"FDTS"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sHIIIIII")  # magic, version, length, l1 bounds, l2 bounds, rate*100


class StreamError(Exception):
    pass


class StreamBuildError(StreamError):
    pass


class MaskBuildError(StreamError):
    pass


class StreamHeaderError(StreamError):
    """Serialized stream has a bad magic, version, or header field."""


class StreamLengthError(StreamError):
    """Serialized stream body does not hold the declared number of steps."""


class RegionOverlapError(StreamError):
    """Declared reserved regions overlap or are out of order."""


def encode_text(text: str) -> np.ndarray:
    data = text.encode("utf-8")
    return np.frombuffer(data, dtype=np.uint8).astype(np.int32) + 1


def decode_text(ids: Iterable[int]) -> str:
    data = bytes(int(i) - 1 for i in ids if int(i) != TEXT_PAD)
    return data.decode("utf-8", errors="replace")


def step_to_seconds(step: int) -> float:
    if step < 0:
        raise StreamError("step indexes are non-negative")
    return step / FRAME_RATE


def seconds_to_steps(seconds: float) -> int:
    if seconds < 0:
        raise StreamError("durations are non-negative")
    return int(round(seconds * FRAME_RATE))


@dataclass(frozen=True)
class TokenStep:
    """One step of the stream, unpacked for single-step access."""

    step_index: int
    text_token: int
    listen_tokens: tuple[int, ...]
    speak_tokens: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.listen_tokens) != 8 or len(self.speak_tokens) != 8:
            raise StreamError("a step carries 8 listen and 8 speak tokens")
        if self.text_token < 0 or min(self.listen_tokens) < 0 or min(self.speak_tokens) < 0:
            raise StreamError("token ids are non-negative")


@dataclass(frozen=True)
class StreamSegment:
    """A contiguous view of stream steps with its absolute start offset."""

    tokens: np.ndarray
    start_step: int

    def __post_init__(self) -> None:
        if self.tokens.ndim != 2 or self.tokens.shape[1] != CHANNELS:
            raise StreamError("segment tokens must be (steps, 17)")
        if self.start_step < 0:
            raise StreamError("segment start offset is non-negative")

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def end_step(self) -> int:
        return self.start_step + len(self)

    def monologue_text(self) -> str:
        return decode_text(self.tokens[:, 0])

    def user_markers(self) -> np.ndarray:
        """Per-step speaker marker (0 where no user utterance is present)."""
        semantic = self.tokens[:, 1]
        return np.where(semantic >= SPEAKER_MARKER_BASE, semantic, 0)

    def dominant_marker(self) -> int | None:
        markers = self.user_markers()
        markers = markers[markers > 0]
        if markers.size == 0:
            return None
        values, counts = np.unique(markers, return_counts=True)
        # most frequent marker; ties break toward the smaller id
        return int(values[np.argmax(counts)])

    def has_any_audio(self) -> bool:
        return bool((self.tokens[:, 1:] != AUDIO_EMPTY).any())


@dataclass(frozen=True)
class TokenStream:
    """An immutable token grid of shape (length, 17)."""

    tokens: np.ndarray
    profile_region: tuple[int, int] = PROFILE_REGION
    retrieval_region: tuple[int, int] = RETRIEVAL_REGION
    frame_rate: float = FRAME_RATE

    def __post_init__(self) -> None:
        tokens = np.ascontiguousarray(np.asarray(self.tokens, dtype=np.int32))
        if tokens.ndim != 2 or tokens.shape[1] != CHANNELS:
            raise StreamError(f"stream tokens must be (steps, {CHANNELS})")
        if tokens.shape[0] > MAX_STREAM_STEPS:
            raise StreamError(
                f"stream holds {tokens.shape[0]} steps, over the {MAX_STREAM_STEPS} cap"
            )
        if (tokens < 0).any():
            raise StreamError("token ids are non-negative")
        l1, l2 = self.profile_region, self.retrieval_region
        if not (0 <= l1[0] <= l1[1] <= l2[0] <= l2[1]):
            raise RegionOverlapError(f"reserved regions out of order: {l1} vs {l2}")
        if tokens.shape[0] < l2[1]:
            raise StreamError("stream must cover both reserved regions")
        reserved = tokens[l1[0]:l1[1], 1:], tokens[l2[0]:l2[1], 1:]
        if any((block != AUDIO_EMPTY).any() for block in reserved):
            raise StreamError("reserved regions must carry empty audio in all 16 slots")
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenStream):
            return NotImplemented
        return (
            np.array_equal(self.tokens, other.tokens)
            and self.profile_region == other.profile_region
            and self.retrieval_region == other.retrieval_region
            and self.frame_rate == other.frame_rate
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def dialog_start(self) -> int:
        return self.retrieval_region[1]

    def step(self, index: int) -> TokenStep:
        if not 0 <= index < len(self):
            raise StreamError(f"step {index} out of range [0, {len(self)})")
        row = self.tokens[index]
        return TokenStep(index, int(row[0]), tuple(map(int, row[1:9])), tuple(map(int, row[9:17])))

    def segment(self, start: int, stop: int) -> StreamSegment:
        if not 0 <= start <= stop <= len(self):
            raise StreamError(f"segment [{start}, {stop}) out of range [0, {len(self)}]")
        return StreamSegment(self.tokens[start:stop], start)

    def text_channel(self) -> np.ndarray:
        return self.tokens[:, 0]


@dataclass(frozen=True)
class TurnScript:
    """One instruction/response exchange inside a dialog.

    Durations are in steps. Spans are absolute [start, end) step ranges and
    are filled in by the stream builder; scripts with spans set are "placed".
    """

    speaker_user: str
    instruction_text: str
    response_text: str
    instruction_steps: int
    response_steps: int
    query_groups: QueryGroups | None = None
    interrupting: bool = False
    echo: bool = False  # echo mixing is metadata only, no signal is modeled
    instruction_span: tuple[int, int] | None = None
    response_span: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.instruction_steps < 1 or self.response_steps < 1:
            raise StreamBuildError("turn durations must be at least one step")

    @property
    def placed(self) -> bool:
        return self.instruction_span is not None and self.response_span is not None


@dataclass(frozen=True)
class DialogScript:
    """A single user's scripted session: turns plus extraction ground truth."""

    dialog_id: str
    turns: tuple[TurnScript, ...]
    annotation: Mapping[str, Any] | None = None
    session_span: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not self.turns:
            raise StreamBuildError(f"dialog {self.dialog_id!r} has no turns")
        speakers = {t.speaker_user for t in self.turns}
        if len(speakers) != 1:
            raise StreamBuildError(f"dialog {self.dialog_id!r} mixes speakers {sorted(speakers)}")
        if not isinstance(self.turns, tuple):
            object.__setattr__(self, "turns", tuple(self.turns))

    @property
    def speaker_user(self) -> str:
        return self.turns[0].speaker_user

    @property
    def placed(self) -> bool:
        return self.session_span is not None and all(t.placed for t in self.turns)


AudioIdFn = Callable[[int, int, int], int]


@dataclass(frozen=True)
class StreamBuildConfig:
    interruption_probability: float = 0.3
    echo_probability: float = 0.3
    response_gap: int = 2
    turn_gap: tuple[int, int] = (3, 10)
    dialog_gap: tuple[int, int] = (26, 60)
    max_steps: int = MAX_STREAM_STEPS
    speaker_markers: Mapping[str, int] | None = None
    audio_id_fn: AudioIdFn | None = None  # (marker, step, slot) -> token id

    def __post_init__(self) -> None:
        if not 0.0 <= self.interruption_probability <= 1.0:
            raise StreamBuildError("interruption probability must be in [0, 1]")
        if not 0.0 <= self.echo_probability <= 1.0:
            raise StreamBuildError("echo probability must be in [0, 1]")
        if self.response_gap < 0 or self.turn_gap[0] < 0 or self.dialog_gap[0] < 0:
            raise StreamBuildError("gaps are non-negative")
        if self.turn_gap[0] > self.turn_gap[1] or self.dialog_gap[0] > self.dialog_gap[1]:
            raise StreamBuildError("gap ranges must be (low, high) with low <= high")
        if self.max_steps > MAX_STREAM_STEPS:
            raise StreamBuildError(f"max_steps cannot exceed {MAX_STREAM_STEPS}")


@dataclass(frozen=True)
class StreamBuildResult:
    stream: TokenStream
    scripts: tuple[DialogScript, ...]
    truncated: tuple[str, ...]  # dialog ids dropped for lack of step budget


def _draw(rng: np.random.Generator, bounds: tuple[int, int]) -> int:
    low, high = bounds
    if low == high:
        return low
    return int(rng.integers(low, high + 1))


def assign_speaker_markers(dialogs: Sequence[DialogScript]) -> dict[str, int]:
    """Markers by first appearance; the harness usually passes an explicit map."""
    markers: dict[str, int] = {}
    for dialog in dialogs:
        if dialog.speaker_user not in markers:
            markers[dialog.speaker_user] = SPEAKER_MARKER_BASE + len(markers)
    return markers


def build_stream(
    dialogs: Sequence[DialogScript],
    config: StreamBuildConfig = StreamBuildConfig(),
    rng_seed: int = 0,
) -> StreamBuildResult:
    """Lay dialogs out after the reserved regions and render the token grid.

    Dialogs are concatenated in order with seeded gaps. Within a dialog, each
    turn after the first may interrupt the ongoing response (probability from
    config): its instruction start is pulled back into the response span, and
    the overlapped speak tokens are kept. Monologue text for every response
    starts two steps before the response audio; turns with query groups write
    the query marker immediately before the response text.

    Dialogs that do not fit the step budget are dropped and reported in the
    result, never silently truncated mid-dialog.
    """
    if not dialogs:
        raise StreamBuildError("at least one dialog script is required")
    rng = np.random.default_rng(rng_seed)
    markers = dict(config.speaker_markers) if config.speaker_markers else assign_speaker_markers(dialogs)
    for dialog in dialogs:
        if dialog.speaker_user not in markers:
            raise StreamBuildError(f"no speaker marker for user {dialog.speaker_user!r}")
        if markers[dialog.speaker_user] < SPEAKER_MARKER_BASE:
            raise StreamBuildError("speaker markers start at id 2")

    placed: list[DialogScript] = []
    truncated: list[str] = []
    cursor = DIALOG_START
    for j, dialog in enumerate(dialogs):
        if truncated:
            truncated.append(dialog.dialog_id)
            continue
        dialog_start = cursor if j == 0 else cursor + _draw(rng, config.dialog_gap)
        turns: list[TurnScript] = []
        t = dialog_start
        prev_instr_end: int | None = None
        prev_resp: tuple[int, int] | None = None
        for k, turn in enumerate(dialog.turns):
            instr_start = t
            interrupting = False
            roll = rng.random()
            if k > 0 and prev_resp is not None and roll < config.interruption_probability:
                max_overlap = min(8, prev_resp[1] - prev_resp[0] - 1, turn.instruction_steps - 1)
                if max_overlap >= 1:
                    overlap = int(rng.integers(1, max_overlap + 1))
                    pulled = prev_resp[1] - overlap
                    if prev_instr_end is not None:
                        pulled = max(pulled, prev_instr_end + 1)
                    if pulled < instr_start:
                        instr_start = pulled
                        interrupting = True
            instr_end = instr_start + turn.instruction_steps
            resp_start = instr_end + config.response_gap
            resp_end = resp_start + turn.response_steps
            echo = bool(rng.random() < config.echo_probability)
            turns.append(
                replace(
                    turn,
                    interrupting=interrupting,
                    echo=echo,
                    instruction_span=(instr_start, instr_end),
                    response_span=(resp_start, resp_end),
                )
            )
            prev_instr_end = instr_end
            prev_resp = (resp_start, resp_end)
            t = resp_end if k == len(dialog.turns) - 1 else resp_end + _draw(rng, config.turn_gap)
        dialog_end = turns[-1].response_span[1]  # type: ignore[index]
        if dialog_end > config.max_steps:
            truncated.append(dialog.dialog_id)
            continue
        placed.append(replace(dialog, turns=tuple(turns), session_span=(dialog_start, dialog_end)))
        cursor = dialog_end

    length = placed[-1].session_span[1] if placed else DIALOG_START  # type: ignore[index]
    tokens = np.zeros((length, CHANNELS), dtype=np.int32)

    for dialog in placed:
        marker = markers[dialog.speaker_user]
        for turn in dialog.turns:
            i0, i1 = turn.instruction_span  # type: ignore[misc]
            r0, r1 = turn.response_span  # type: ignore[misc]
            if config.audio_id_fn is None:
                tokens[i0:i1, LISTEN_SLOTS] = marker
            else:
                for step in range(i0, i1):
                    for slot in range(8):
                        value = config.audio_id_fn(marker, step, slot)
                        if value < SPEAKER_MARKER_BASE and slot == 0:
                            raise StreamBuildError("slot 0 must carry the speaker marker id")
                        tokens[step, 1 + slot] = value
            tokens[r0:r1, SPEAK_SLOTS] = ASSISTANT_VOICE

            text_start = r0 - MONOLOGUE_LEAD_STEPS
            if turn.query_groups is not None:
                marker_ids = encode_text(format_query_protocol(turn.query_groups))
                q_start = text_start - len(marker_ids)
                if q_start < i0:
                    raise StreamBuildError(
                        f"query marker for dialog {dialog.dialog_id!r} does not fit in the "
                        f"instruction span (needs {len(marker_ids)} steps before the response)"
                    )
                tokens[q_start:text_start, 0] = marker_ids
            response_ids = encode_text(turn.response_text)[: r1 - text_start]
            tokens[text_start:text_start + len(response_ids), 0] = response_ids

    stream = TokenStream(tokens)
    return StreamBuildResult(stream, tuple(placed), tuple(truncated))


MaskKind = Literal["profile", "query", "response", "session_tags"]
MaskTask = Literal["profile", "query_response", "session_tags"]


@dataclass(frozen=True)
class SupervisionMask:
    """Per-step supervision flags for one training sample.

    Binary kinds carry a (length, 2) array over the (text, speak) channels;
    the session_tags kind carries a flat per-step label array over {0,1,2,3}
    (none, session start, in session, session end).
    """

    kind: MaskKind
    sample_id: str
    mask: np.ndarray

    def __post_init__(self) -> None:
        mask = np.asarray(self.mask, dtype=np.uint8)
        if self.kind == "session_tags":
            if mask.ndim != 1:
                raise MaskBuildError("session_tags masks are flat label arrays")
            if mask.max(initial=0) > 3:
                raise MaskBuildError("session tags take values in {0, 1, 2, 3}")
        else:
            if mask.ndim != 2 or mask.shape[1] != 2:
                raise MaskBuildError("binary masks are (length, 2) over (text, speak)")
            if mask.max(initial=0) > 1:
                raise MaskBuildError("binary masks take values in {0, 1}")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    def __len__(self) -> int:
        return int(self.mask.shape[0])

    def supervised_steps(self) -> np.ndarray:
        if self.kind == "session_tags":
            return np.flatnonzero(self.mask)
        return np.flatnonzero(self.mask.any(axis=1))


def _require_placed(stream: TokenStream, scripts: Sequence[DialogScript]) -> None:
    for dialog in scripts:
        if not dialog.placed:
            raise MaskBuildError(f"dialog {dialog.dialog_id!r} has no placed spans")
        start, end = dialog.session_span  # type: ignore[misc]
        if start < stream.dialog_start or end > len(stream):
            raise MaskBuildError(
                f"dialog {dialog.dialog_id!r} span [{start}, {end}) falls outside the "
                f"dialog region [{stream.dialog_start}, {len(stream)})"
            )


def make_supervision_masks(
    stream: TokenStream,
    scripts: Sequence[DialogScript],
    task: MaskTask,
) -> list[SupervisionMask]:
    """Build the supervision masks for one training task.

    profile: one mask per dialog, 1s on the text and speak channels across
    that dialog's span. query_response: two masks per turn, a query mask from
    the turn's audio start to the end of the query words and a response mask
    from there to the turn's audio end; every turn must carry query groups.
    session_tags: a single per-step label sequence for the whole stream.
    """
    _require_placed(stream, scripts)
    length = len(stream)
    masks: list[SupervisionMask] = []
    if task == "profile":
        for dialog in scripts:
            start, end = dialog.session_span  # type: ignore[misc]
            flags = np.zeros((length, 2), dtype=np.uint8)
            flags[start:end, :] = 1
            masks.append(SupervisionMask("profile", f"{dialog.dialog_id}/profile", flags))
        return masks
    if task == "query_response":
        for dialog in scripts:
            for k, turn in enumerate(dialog.turns):
                if turn.query_groups is None:
                    raise MaskBuildError(
                        f"dialog {dialog.dialog_id!r} turn {k} lacks query-word annotations"
                    )
                i0, _ = turn.instruction_span  # type: ignore[misc]
                r0, r1 = turn.response_span  # type: ignore[misc]
                query_end = r0 - MONOLOGUE_LEAD_STEPS
                q = np.zeros((length, 2), dtype=np.uint8)
                q[i0:query_end, :] = 1
                masks.append(SupervisionMask("query", f"{dialog.dialog_id}/t{k}/query", q))
                r = np.zeros((length, 2), dtype=np.uint8)
                r[query_end:r1, :] = 1
                masks.append(SupervisionMask("response", f"{dialog.dialog_id}/t{k}/response", r))
        return masks
    if task == "session_tags":
        labels = np.zeros(length, dtype=np.uint8)
        for dialog in scripts:
            start, end = dialog.session_span  # type: ignore[misc]
            labels[start] = 1
            if end - 1 > start:
                labels[start + 1:end - 1] = 2
                labels[end - 1] = 3
        masks.append(SupervisionMask("session_tags", "session_tags", labels))
        return masks
    raise MaskBuildError(f"unknown mask task {task!r}")


def _write_varint(buf: io.BytesIO, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.write(bytes((byte | 0x80,)))
        else:
            buf.write(bytes((byte,)))
            return


def serialize_stream(stream: TokenStream) -> bytes:
    """Header plus one unsigned varint per token id, row-major."""
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            STREAM_MAGIC,
            STREAM_VERSION,
            len(stream),
            stream.profile_region[0],
            stream.profile_region[1],
            stream.retrieval_region[0],
            stream.retrieval_region[1],
            int(round(stream.frame_rate * 100)),
        )
    )
    for value in stream.tokens.ravel():
        _write_varint(buf, int(value))
    return buf.getvalue()


def parse_stream(data: bytes) -> TokenStream:
    if len(data) < _HEADER.size:
        raise StreamHeaderError("stream header is truncated")
    magic, version, length, l1a, l1b, l2a, l2b, rate100 = _HEADER.unpack_from(data)
    if magic != STREAM_MAGIC:
        raise StreamHeaderError(f"bad magic {magic!r}")
    if version != STREAM_VERSION:
        raise StreamHeaderError(f"unsupported stream format version {version}")
    if not (0 <= l1a <= l1b <= l2a <= l2b):
        raise RegionOverlapError(f"reserved regions out of order: ({l1a}, {l1b}) vs ({l2a}, {l2b})")
    if length > MAX_STREAM_STEPS:
        raise StreamHeaderError(f"declared length {length} exceeds the {MAX_STREAM_STEPS} cap")

    values = np.zeros(length * CHANNELS, dtype=np.int64)
    pos = _HEADER.size
    for i in range(values.shape[0]):
        shift = 0
        value = 0
        while True:
            if pos >= len(data):
                raise StreamLengthError(
                    f"stream body ended after {i} of {values.shape[0]} token ids"
                )
            byte = data[pos]
            pos += 1
            value |= (byte & 0x7F) << shift
            if not byte & 0x80:
                break
            shift += 7
        values[i] = value
    if pos != len(data):
        raise StreamLengthError(f"{len(data) - pos} trailing bytes after the declared steps")
    tokens = values.reshape(length, CHANNELS).astype(np.int32)
    try:
        return TokenStream(tokens, (l1a, l1b), (l2a, l2b), rate100 / 100.0)
    except RegionOverlapError:
        raise
    except StreamError as exc:
        raise StreamHeaderError(str(exc)) from exc


def _groups_to_json(groups: QueryGroups | None) -> dict[str, list[str]] | None:
    if groups is None:
        return None
    return {"relations": list(groups.relations), "keywords": list(groups.keywords)}


def _groups_from_json(payload: Mapping[str, Any] | None) -> QueryGroups | None:
    if payload is None:
        return None
    return QueryGroups(tuple(payload.get("relations", ())), tuple(payload.get("keywords", ())))


def dialog_to_record(dialog: DialogScript) -> dict[str, Any]:
    """JSON-ready dict for one dialog script, spans included when placed."""
    return {
        "dialog_id": dialog.dialog_id,
        "session_span": list(dialog.session_span) if dialog.session_span else None,
        "annotation": dict(dialog.annotation) if dialog.annotation is not None else None,
        "turns": [
            {
                "speaker_user": t.speaker_user,
                "instruction_text": t.instruction_text,
                "response_text": t.response_text,
                "instruction_steps": t.instruction_steps,
                "response_steps": t.response_steps,
                "query_groups": _groups_to_json(t.query_groups),
                "interrupting": t.interrupting,
                "echo": t.echo,
                "instruction_span": list(t.instruction_span) if t.instruction_span else None,
                "response_span": list(t.response_span) if t.response_span else None,
            }
            for t in dialog.turns
        ],
    }


def dialog_from_record(record: Mapping[str, Any]) -> DialogScript:
    turns = tuple(
        TurnScript(
            speaker_user=t["speaker_user"],
            instruction_text=t["instruction_text"],
            response_text=t["response_text"],
            instruction_steps=t["instruction_steps"],
            response_steps=t["response_steps"],
            query_groups=_groups_from_json(t.get("query_groups")),
            interrupting=t.get("interrupting", False),
            echo=t.get("echo", False),
            instruction_span=tuple(t["instruction_span"]) if t.get("instruction_span") else None,
            response_span=tuple(t["response_span"]) if t.get("response_span") else None,
        )
        for t in record["turns"]
    )
    return DialogScript(
        dialog_id=record["dialog_id"],
        turns=turns,
        annotation=record.get("annotation"),
        session_span=tuple(record["session_span"]) if record.get("session_span") else None,
    )


def scripts_to_jsonl(scripts: Sequence[DialogScript]) -> str:
    """Human-readable structured text, one dialog record per line."""
    lines = [json.dumps(dialog_to_record(dialog), sort_keys=True) for dialog in scripts]
    return "\n".join(lines) + ("\n" if lines else "")


def scripts_from_jsonl(text: str) -> list[DialogScript]:
    return [dialog_from_record(json.loads(line)) for line in text.splitlines() if line.strip()]

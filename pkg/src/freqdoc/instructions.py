"""OCR instruction dataset construction.

Annotations (words, paragraphs, QA pairs, captions) become instruction and
response records for five OCR task families plus captioning and document
understanding. Instruction text comes from a fixed template bank; boxes are
rendered in canvas-normalized coordinates with exactly three decimals.

Record generation is seeded per annotation content, so output is identical
regardless of input order or worker count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable

from .errors import ValidationError
from .imaging import CanvasTransform, map_box, plan_canvas

OCR_TASKS = ("detect", "recognize", "spot", "read_paragraph", "read_full")
TASKS = OCR_TASKS + ("caption", "understand")
PERCEPTION_TASKS = OCR_TASKS + ("caption",)
COMPREHENSION_TASKS = ("understand",)
STAGES = ("pretrain", "finetune")

DETERMINERS = ("this", "the")
IMAGE_NOUNS = ("image", "photo", "picture", "shot", "frame", "pic")

RECOGNITION_TEMPLATES = (
    "Extract all the text in <term>.",
    "Can you identify the words in <term>?",
    "Tell me the text you see in <term>.",
    "What's written in <term>?",
    "Decode the text from <term>.",
    "Reveal the text in <term> for me.",
    "Detail the text present in <term>.",
    "Elaborate on the words in <term>.",
    "Illuminate me with the text from <term>.",
    "Narrate the words you find in <term>.",
    "Can you spell out the text from <term>?",
    "I'd like to know the words in <term>.",
    "Dissect <term> and tell me its text.",
    "I'm curious about the text in <term>. What is it?",
    "Help me decipher the words in <term>.",
    "Shed light on the text of <term>.",
    "Convey the written part of <term> to me.",
    "Identify the text in <term>.",
    "What's the text in <term>.",
    "Recognize all the text in <term>.",
)

DETECTION_TEMPLATES = (
    "Output all the text's locations in <term>.",
    "Where are the texts located in <term>?",
    "Locate the texts in <term> for me.",
    "Highlight the positions of all the texts in <term>.",
    "I need the coordinates of the texts in <term>.",
    "Show me the regions with texts in <term>.",
    "Determine the areas with text in <term>.",
    "Can you pinpoint the text locations in <term>?",
    "Map out the texts in <term> for me.",
    "Display the text positions in <term>.",
)

SPOTTING_TEMPLATES = (
    "Recognize all the text in <term> and return their positions [x1, y1, x2, y2].",
    "Extract all the text in <term> and return their coordinates in the format of "
    "[x1, y1, x2, y2].",
    "Identify the text in <term> and return their [x1, y1, x2, y2] coordinates.",
    "Identify the text in <term> and return their positions in the format of "
    "[x1, y1, x2, y2].",
    "Recognize all the text in <term> return their coordinates in the format of "
    "[x1, y1, x2, y2].",
    "Detect the text in <term> and return their coordinates in the format of "
    "[x1, y1, x2, y2].",
    "Find all the text in <term> and return their coordinates in the format of "
    "[x1, y1, x2, y2].",
    "Find all the text in <term> and return their positions represented in the "
    "format of [x1, y1, x2, y2].",
    "Parse all the text in <term> and return their coordinates in the format of "
    "[x1, y1, x2, y2].",
    "Interpret all text in <term> and output their coordinates in the format "
    "[x1, y1, x2, y2].",
)

PARAGRAPH_TEMPLATES = (
    "What text is inside the region <box> in <term>?",
    "Tell me about the content in the area marked as <box> of <term>.",
    "I'm curious about the text in the section denoted by <box> of <term>.",
    "What does <term> say in the area outlined by <box>?",
    "Decipher the words within the space defined by <box> in <term>.",
    "Can you read the text from the section specified as <box> in <term>.",
    "Reveal the content of the region marked as <box> in <term>.",
    "Extract the words from the portion designated by <box> in <term>.",
    "I'd like to know the text from the highlighted box given by <box> in <term>.",
    "Decode the inscription inside the region defined by <box> in <term>.",
)

FULL_TEXT_TEMPLATES = (
    "Give a detailed reading of <term>.",
    "Can you provide a full reading from <term>.",
    "Read aloud the text from <term>.",
    "Convey the entire content of <term> to me.",
    "I'd like a comprehensive reading of <term>.",
    "Recite the content from <term> for me.",
    "Provide a transcript of the text from <term>.",
    "I want to hear the text from <term>.",
    "Narrate the entire text of <term> for me.",
    "Please read out the full text from <term>.",
)

# Captions carry their own text; the prompt side only needs one neutral form.
CAPTION_TEMPLATES = ("Describe <term>.",)

_TEMPLATE_COUNTS = {
    "recognize": 20,
    "detect": 10,
    "spot": 10,
    "read_paragraph": 10,
    "read_full": 10,
}


@dataclass(frozen=True)
class TemplateBank:
    """The instruction templates, 20/10/10/10/10 across the OCR tasks."""

    recognition: tuple[str, ...] = RECOGNITION_TEMPLATES
    detection: tuple[str, ...] = DETECTION_TEMPLATES
    spotting: tuple[str, ...] = SPOTTING_TEMPLATES
    paragraph_reading: tuple[str, ...] = PARAGRAPH_TEMPLATES
    full_text_reading: tuple[str, ...] = FULL_TEXT_TEMPLATES
    determiners: tuple[str, ...] = DETERMINERS
    image_nouns: tuple[str, ...] = IMAGE_NOUNS

    def __post_init__(self) -> None:
        by_task = self._by_task()
        for task, expected in _TEMPLATE_COUNTS.items():
            templates = by_task[task]
            if len(templates) != expected:
                raise ValidationError(
                    f"{task} needs exactly {expected} templates, got {len(templates)}"
                )
            for t in templates:
                if "<term>" not in t:
                    raise ValidationError(f"template {t!r} lacks <term>")
                if task == "read_paragraph" and "<box>" not in t:
                    raise ValidationError(f"paragraph template {t!r} lacks <box>")
                if task != "read_paragraph" and "<box>" in t:
                    raise ValidationError(f"template {t!r} must not carry <box>")
        if not self.determiners or not self.image_nouns:
            raise ValidationError("determiners and image nouns must be non-empty")

    def _by_task(self) -> dict[str, tuple[str, ...]]:
        return {
            "recognize": self.recognition,
            "detect": self.detection,
            "spot": self.spotting,
            "read_paragraph": self.paragraph_reading,
            "read_full": self.full_text_reading,
            "caption": CAPTION_TEMPLATES,
        }

    def templates_for(self, task: str) -> tuple[str, ...]:
        try:
            return self._by_task()[task]
        except KeyError:
            raise ValidationError(f"no templates exist for task {task!r}") from None

    @classmethod
    def default(cls) -> "TemplateBank":
        return cls()


@dataclass(frozen=True)
class TextRegion:
    """One piece of text with its box in original pixel coordinates."""

    text: str
    box: tuple[float, float, float, float]


@dataclass(frozen=True)
class QaPair:
    question: str
    answer: str


@dataclass(frozen=True)
class Annotation:
    image: str
    width: int
    height: int
    words: tuple[TextRegion, ...] = ()
    paragraphs: tuple[TextRegion, ...] = ()
    qa: tuple[QaPair, ...] = ()
    caption: str | None = None


def _parse_regions(raw, width: int, height: int, label: str) -> tuple[TextRegion, ...]:
    if not isinstance(raw, list):
        raise ValidationError(f"{label} must be a list")
    regions = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ValidationError(f"{label}[{i}] must be an object")
        text = item.get("text")
        if not isinstance(text, str) or not text:
            raise ValidationError(f"{label}[{i}] has no text")
        box = item.get("box")
        if not isinstance(box, (list, tuple)) or len(box) != 4:
            raise ValidationError(f"{label}[{i}] box must hold four numbers")
        try:
            x1, y1, x2, y2 = (float(v) for v in box)
        except (TypeError, ValueError):
            raise ValidationError(f"{label}[{i}] box must hold four numbers") from None
        if not (0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height):
            raise ValidationError(
                f"{label}[{i}] box {box} is degenerate or outside {width}x{height}"
            )
        regions.append(TextRegion(text=text, box=(x1, y1, x2, y2)))
    return tuple(regions)


def parse_annotation(obj: dict) -> Annotation:
    """Validate one annotation object; messages name the offending field."""
    if not isinstance(obj, dict):
        raise ValidationError("annotation must be a JSON object")
    image = obj.get("image")
    if not isinstance(image, str) or not image:
        raise ValidationError("image must be a non-empty string")
    width, height = obj.get("width"), obj.get("height")
    if not isinstance(width, int) or not isinstance(height, int) or width < 1 or height < 1:
        raise ValidationError("width and height must be positive integers")
    words = _parse_regions(obj.get("words", []), width, height, "words")
    paragraphs = _parse_regions(obj.get("paragraphs", []), width, height, "paragraphs")
    qa_raw = obj.get("qa", [])
    if not isinstance(qa_raw, list):
        raise ValidationError("qa must be a list")
    qa = []
    for i, item in enumerate(qa_raw):
        if not isinstance(item, dict):
            raise ValidationError(f"qa[{i}] must be an object")
        question, answer = item.get("question"), item.get("answer")
        if not isinstance(question, str) or not question:
            raise ValidationError(f"qa[{i}] has no question")
        if not isinstance(answer, str) or not answer:
            raise ValidationError(f"qa[{i}] has no answer")
        qa.append(QaPair(question=question, answer=answer))
    caption = obj.get("caption")
    if caption is not None and (not isinstance(caption, str) or not caption):
        raise ValidationError("caption must be a non-empty string when present")
    if not (words or paragraphs or qa or caption):
        raise ValidationError("annotation carries no usable content")
    return Annotation(
        image=image, width=width, height=height,
        words=words, paragraphs=paragraphs, qa=tuple(qa), caption=caption,
    )


def format_box(box: tuple[float, float, float, float]) -> str:
    """Render a normalized box as [x1,y1,x2,y2] with three decimals."""
    return "[" + ",".join(f"{float(v):.3f}" for v in box) + "]"


def reading_order(regions: tuple[TextRegion, ...]) -> list[list[int]]:
    """Group region indices into rows, top to bottom then left to right.

    Two boxes share a row when their vertical overlap covers at least half
    of the shorter box; the first box assigned to a row anchors it.
    """
    order = sorted(range(len(regions)), key=lambda i: (regions[i].box[1], regions[i].box[0]))
    rows: list[list[int]] = []
    for i in order:
        y1, y2 = regions[i].box[1], regions[i].box[3]
        for row in rows:
            a1, a2 = regions[row[0]].box[1], regions[row[0]].box[3]
            overlap = min(y2, a2) - max(y1, a1)
            if overlap >= 0.5 * min(y2 - y1, a2 - a1):
                row.append(i)
                break
        else:
            rows.append([i])
    for row in rows:
        row.sort(key=lambda i: (regions[i].box[0], i))
    return rows


def _flat_order(regions: tuple[TextRegion, ...]) -> list[int]:
    return [i for row in reading_order(regions) for i in row]


def eligible_tasks(annotation: Annotation) -> tuple[str, ...]:
    tasks = []
    if annotation.words:
        tasks += ["detect", "recognize", "spot"]
    if annotation.paragraphs:
        tasks.append("read_paragraph")
    if annotation.words or annotation.paragraphs:
        tasks.append("read_full")
    return tuple(tasks)


def sample_task(annotation: Annotation, rng: random.Random) -> str | None:
    """Uniform draw over the OCR tasks this annotation supports, if any."""
    tasks = eligible_tasks(annotation)
    if not tasks:
        return None
    return tasks[rng.randrange(len(tasks))]


def _render_instruction(task, bank, boxes, rng):
    templates = bank.templates_for(task)
    index = rng.randrange(len(templates))
    text = templates[index]
    if "<box>" in text:
        if len(boxes) != 1:
            raise ValidationError(f"{task} takes exactly one box, got {len(boxes)}")
        text = text.replace("<box>", format_box(boxes[0]))
    determiner = bank.determiners[rng.randrange(len(bank.determiners))]
    noun = bank.image_nouns[rng.randrange(len(bank.image_nouns))]
    return text.replace("<term>", f"{determiner} {noun}"), index


def render_instruction(
    task: str, bank: TemplateBank, boxes: tuple, rng: random.Random
) -> str:
    """Fill one template. Draw order is template, determiner, noun."""
    if task == "understand":
        raise ValidationError("understanding instructions come from the annotation")
    text, _ = _render_instruction(task, bank, boxes, rng)
    return text


def render_response(
    task: str,
    annotation: Annotation,
    transform: CanvasTransform,
    paragraph_index: int | None = None,
    qa_index: int | None = None,
) -> str:
    """Deterministic answer text for a task over one annotation."""
    if task == "detect":
        if not annotation.words:
            raise ValidationError("detection requires word boxes")
        order = _flat_order(annotation.words)
        return "\n".join(
            format_box(map_box(annotation.words[i].box, transform)) for i in order
        )
    if task == "recognize":
        if not annotation.words:
            raise ValidationError("recognition requires words")
        return "\n".join(annotation.words[i].text for i in _flat_order(annotation.words))
    if task == "spot":
        if not annotation.words:
            raise ValidationError("spotting requires words")
        lines = []
        for i in _flat_order(annotation.words):
            word = annotation.words[i]
            lines.append(f"{word.text} {format_box(map_box(word.box, transform))}")
        return "\n".join(lines)
    if task == "read_paragraph":
        if paragraph_index is None or not (0 <= paragraph_index < len(annotation.paragraphs)):
            raise ValidationError("paragraph reading requires a valid paragraph index")
        return annotation.paragraphs[paragraph_index].text
    if task == "read_full":
        regions = annotation.words or annotation.paragraphs
        if not regions:
            raise ValidationError("full reading requires words or paragraphs")
        rows = reading_order(regions)
        return "\n".join(" ".join(regions[i].text for i in row) for row in rows)
    if task == "caption":
        if not annotation.caption:
            raise ValidationError("captioning requires a caption")
        return annotation.caption
    if task == "understand":
        if qa_index is None or not (0 <= qa_index < len(annotation.qa)):
            raise ValidationError("understanding requires a valid qa index")
        return annotation.qa[qa_index].answer
    raise ValidationError(f"unknown task {task!r}")


@dataclass(frozen=True)
class InstructionRecord:
    id: str
    image: str
    task: str
    instruction: str
    response: str
    stage: str
    boxes: tuple[tuple[float, float, float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}")
        if self.stage not in STAGES:
            raise ValidationError(f"unknown stage {self.stage!r}")
        if not self.instruction or not self.response:
            raise ValidationError("instruction and response must be non-empty")
        for text in (self.instruction, self.response):
            if "<term>" in text or "<box>" in text:
                raise ValidationError(f"unsubstituted placeholder in {text!r}")
        for box in self.boxes:
            if not all(0.0 <= v <= 1.0 for v in box):
                raise ValidationError(f"box {box} has coordinates outside [0, 1]")
            if not (box[0] < box[2] and box[1] < box[3]):
                raise ValidationError(f"box {box} is degenerate")

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "image": self.image,
                "task": self.task,
                "instruction": self.instruction,
                "response": self.response,
                "stage": self.stage,
                "boxes": [list(b) for b in self.boxes],
            },
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class RejectEntry:
    line_number: int
    reason: str

    def to_json(self) -> str:
        return json.dumps(
            {"line_number": self.line_number, "reason": self.reason}, ensure_ascii=False
        )


@dataclass
class DatasetBuild:
    records: list[InstructionRecord]
    rejects: list[RejectEntry]
    stage: str
    seed: int


def _record_id(image: str, task: str, slot: int, base: str) -> str:
    digest = hashlib.sha256(f"{image}|{task}|{slot}|{base}".encode("utf-8"))
    return digest.hexdigest()[:16]


def _mappable(regions, transform) -> tuple[TextRegion, ...]:
    # Boxes thinner than the three-decimal grid cannot be rendered legally.
    kept = []
    for region in regions:
        x1, y1, x2, y2 = map_box(region.box, transform)
        if x1 < x2 and y1 < y2:
            kept.append(region)
    return tuple(kept)


def _records_for(line_number, payload, bank, stage, seed, canvas_side):
    try:
        if isinstance(payload, (str, bytes)):
            obj = json.loads(payload)
        else:
            obj = payload
        if not isinstance(obj, dict):
            raise ValidationError("annotation must be a JSON object")
        annotation = parse_annotation(obj)
    except (ValidationError, json.JSONDecodeError) as exc:
        return [], RejectEntry(line_number=line_number, reason=str(exc))

    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    base = hashlib.sha256(f"{seed}|{canonical}".encode("utf-8")).hexdigest()
    rng = random.Random(int(base[:16], 16))
    transform = plan_canvas(annotation.width, annotation.height, canvas_side)
    view = dataclasses.replace(
        annotation,
        words=_mappable(annotation.words, transform),
        paragraphs=_mappable(annotation.paragraphs, transform),
    )

    records = []
    task = sample_task(view, rng)
    if task is not None:
        paragraph_index = None
        instruction_boxes: tuple = ()
        if task == "read_paragraph":
            paragraph_index = rng.randrange(len(view.paragraphs))
            instruction_boxes = (map_box(view.paragraphs[paragraph_index].box, transform),)
        instruction, template_index = _render_instruction(task, bank, instruction_boxes, rng)
        response = render_response(task, view, transform, paragraph_index=paragraph_index)
        if task in ("detect", "spot"):
            boxes = tuple(
                map_box(view.words[i].box, transform) for i in _flat_order(view.words)
            )
        elif task == "read_paragraph":
            boxes = instruction_boxes
        else:
            boxes = ()
        records.append(
            InstructionRecord(
                id=_record_id(view.image, task, template_index, base),
                image=view.image,
                task=task,
                instruction=instruction,
                response=response,
                stage=stage,
                boxes=boxes,
            )
        )

    if stage == "pretrain" and annotation.caption:
        instruction, template_index = _render_instruction("caption", bank, (), rng)
        records.append(
            InstructionRecord(
                id=_record_id(annotation.image, "caption", template_index, base),
                image=annotation.image,
                task="caption",
                instruction=instruction,
                response=annotation.caption,
                stage=stage,
            )
        )
    if stage == "finetune":
        for qa_index, pair in enumerate(annotation.qa):
            records.append(
                InstructionRecord(
                    id=_record_id(annotation.image, "understand", qa_index, base),
                    image=annotation.image,
                    task="understand",
                    instruction=pair.question,
                    response=pair.answer,
                    stage=stage,
                )
            )
    return records, None


def build_dataset(
    annotations: Iterable[dict | str],
    bank: TemplateBank | None = None,
    stage: str = "pretrain",
    seed: int = 0,
    canvas_side: int = 2560,
    workers: int = 1,
) -> DatasetBuild:
    """Turn an annotation stream into instruction records plus a reject log.

    Records are sorted by id before returning; with per-annotation seeding
    this makes the output a pure function of (content, stage, seed).
    """
    if stage not in STAGES:
        raise ValidationError(f"unknown stage {stage!r}")
    if workers < 1:
        raise ValidationError("workers must be at least 1")
    if bank is None:
        bank = TemplateBank.default()
    items = list(enumerate(annotations, start=1))

    def work(item):
        line_number, payload = item
        return _records_for(line_number, payload, bank, stage, seed, canvas_side)

    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(item) for item in items]

    records = [record for batch, _ in results for record in batch]
    rejects = [reject for _, reject in results if reject is not None]
    records.sort(key=lambda r: r.id)
    rejects.sort(key=lambda r: r.line_number)
    return DatasetBuild(records=records, rejects=rejects, stage=stage, seed=seed)


@dataclass(frozen=True)
class MixPlan:
    """How to interleave perception and comprehension streams."""

    batch_size: int = 8
    perception_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if not 0.0 <= self.perception_fraction <= 1.0:
            raise ValidationError("perception_fraction must lie in [0, 1]")
        exact = self.perception_fraction * self.batch_size
        if abs(exact - round(exact)) > 1e-9:
            raise ValidationError(
                f"fraction {self.perception_fraction} of batch {self.batch_size} "
                "is not a whole number of records"
            )

    @property
    def perception_per_batch(self) -> int:
        return round(self.perception_fraction * self.batch_size)


@dataclass
class MixReport:
    batches: int = 0
    perception_used: int = 0
    comprehension_used: int = 0
    perception_dropped: int = 0
    comprehension_dropped: int = 0


def mix_batches(
    perception: Iterable, comprehension: Iterable, plan: MixPlan
) -> tuple[list[list], MixReport]:
    """Fixed-ratio batches, shuffled within batch, trailing partials dropped."""
    p_items = list(perception)
    c_items = list(comprehension)
    take_p = plan.perception_per_batch
    take_c = plan.batch_size - take_p
    batches: list[list] = []
    i = j = 0
    while i + take_p <= len(p_items) and j + take_c <= len(c_items):
        batch = p_items[i:i + take_p] + c_items[j:j + take_c]
        random.Random(f"{plan.seed}|batch|{len(batches)}").shuffle(batch)
        batches.append(batch)
        i += take_p
        j += take_c
    report = MixReport(
        batches=len(batches),
        perception_used=i,
        comprehension_used=j,
        perception_dropped=len(p_items) - i,
        comprehension_dropped=len(c_items) - j,
    )
    return batches, report

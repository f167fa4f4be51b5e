"""Dataset loading: a small JSONL format for pre-tokenized spans and the
nested SQuAD-style JSON layout with character-offset answers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import DataError


_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass
class TokenizedExample:
    id: str
    passage_tokens: list[str]
    question_tokens: list[str]
    answer_start: int
    answer_end: int
    answer_texts: list[str] = field(default_factory=list)

    def validate(self) -> None:
        n = len(self.passage_tokens)
        if not self.passage_tokens or not self.question_tokens:
            raise DataError(f"example {self.id}: empty passage or question")
        if not 0 <= self.answer_start <= self.answer_end < n:
            raise DataError(
                f"example {self.id}: span ({self.answer_start}, {self.answer_end}) "
                f"outside passage of length {n}")


def tokenize(text: str) -> tuple[list[str], list[tuple[int, int]]]:
    """Lowercased word/punctuation tokens with (start, end) char offsets."""
    tokens, offsets = [], []
    for m in _TOKEN_RE.finditer(text):
        tokens.append(m.group(0).lower())
        offsets.append((m.start(), m.end()))
    return tokens, offsets


def load_jsonl(path: str) -> list[TokenizedExample]:
    """One example per line: id, passage, question, answer_start, answer_end,
    answers.  Passage and question may be strings (tokenized here) or lists.
    """
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid json ({exc})") from exc
            missing = {"passage", "question", "answer_start", "answer_end"} - set(obj)
            if missing:
                raise DataError(f"{path}:{lineno}: missing fields {sorted(missing)}")
            passage = obj["passage"]
            question = obj["question"]
            p_tokens = passage if isinstance(passage, list) else tokenize(passage)[0]
            q_tokens = question if isinstance(question, list) else tokenize(question)[0]
            start, end = obj["answer_start"], obj["answer_end"]
            if not isinstance(start, int) or not isinstance(end, int):
                raise DataError(f"{path}:{lineno}: answer_start/answer_end must be ints")
            answers = obj.get("answers") or [" ".join(p_tokens[start:end + 1])]
            ex = TokenizedExample(
                id=str(obj.get("id", f"line-{lineno}")),
                passage_tokens=p_tokens, question_tokens=q_tokens,
                answer_start=start, answer_end=end, answer_texts=list(answers))
            try:
                ex.validate()
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            examples.append(ex)
    if not examples:
        raise DataError(f"{path}: no examples found")
    return examples


def _char_to_token_span(offsets: list[tuple[int, int]],
                        ans_start: int, ans_end: int) -> tuple[int, int] | None:
    """Token span covering [ans_start, ans_end); None when nothing overlaps."""
    start_tok = end_tok = None
    for i, (s, e) in enumerate(offsets):
        if e > ans_start and start_tok is None:
            start_tok = i
        if s < ans_end:
            end_tok = i
    if start_tok is None or end_tok is None or start_tok > end_tok:
        return None
    return start_tok, end_tok


def load_squad(path: str, max_passage_len: int | None = None,
               max_question_len: int | None = None) -> tuple[list[TokenizedExample], int]:
    """Flatten the nested article/paragraph/qas layout.  Answers arrive as
    character offsets into the raw context; the first answer that maps onto a
    token span (surviving any passage cap) becomes the target.  Returns the
    examples and the count of dropped questions.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid json ({exc})") from exc
    if "data" not in payload:
        raise DataError(f"{path}: missing top-level 'data' field")

    examples = []
    dropped = 0
    for article in payload["data"]:
        for para in article.get("paragraphs", []):
            context = para.get("context", "")
            p_tokens, offsets = tokenize(context)
            if max_passage_len is not None:
                p_tokens = p_tokens[:max_passage_len]
                offsets = offsets[:max_passage_len]
            if not p_tokens:
                dropped += len(para.get("qas", []))
                continue
            for qa in para.get("qas", []):
                q_tokens, _ = tokenize(qa.get("question", ""))
                if max_question_len is not None:
                    q_tokens = q_tokens[:max_question_len]
                answers = qa.get("answers", [])
                texts = [a["text"] for a in answers if "text" in a]
                span = None
                for a in answers:
                    if "answer_start" not in a or "text" not in a:
                        continue
                    span = _char_to_token_span(
                        offsets, a["answer_start"], a["answer_start"] + len(a["text"]))
                    if span is not None:
                        break
                if span is None or not q_tokens:
                    dropped += 1
                    continue
                examples.append(TokenizedExample(
                    id=str(qa.get("id", f"qa-{len(examples)}")),
                    passage_tokens=p_tokens, question_tokens=q_tokens,
                    answer_start=span[0], answer_end=span[1], answer_texts=texts))
    if not examples:
        raise DataError(f"{path}: no usable examples (dropped {dropped})")
    return examples, dropped

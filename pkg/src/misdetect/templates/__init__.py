"""Versioned ChatML prompt templates with ``{slot}`` placeholders.

Each template is pinned by SHA-256. Loading a template whose bytes do not
match the pinned hash raises :class:`TemplateMismatchError`, so golden files
cannot silently drift away from the template that produced them.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from ..backends.base import Message

PINNED: dict[tuple[str, str], str] = {
    ("verification", "v1"): "44c81375e029aa3c1c292a9b1db5f85a2ea69c8bc76d9e839737b7da6591f029",
    ("reasoner", "v1"): "f5b212dd1fc4dbc5b1809f13aed8de4fcbe6aad15370cf7d985cea4c2b1a5c22",
    ("teacher", "v1"): "bf8e0e26699e125fe35c6457b95f244e03a27e1c70f06bbf5474cfd76f6fdb19",
    ("judge", "v1"): "fadd0a32c6ee6617cf63fd7595e873ed8643ee38c8211a400b8ba3d771621630",
}

_SLOT = re.compile(r"\{([a-z_]+)\}")
_BLOCK = re.compile(r"<\|im_start\|>(system|user|assistant)\n(.*?)<\|im_end\|>\n", re.S)
_GEN_PROMPT = "<|im_start|>assistant\n"


class TemplateMismatchError(RuntimeError):
    pass


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    version: str
    text: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(_SLOT.findall(self.text)))

    def render(self, values: Mapping[str, str]) -> str:
        return _fill(self.text, values, self.slots)

    def messages(self, values: Mapping[str, str]) -> tuple[Message, ...]:
        """Split the template into chat turns, then fill each turn.

        Filling after splitting keeps user-supplied text that happens to
        contain ChatML markers from corrupting the turn structure.
        """
        if not self.text.endswith(_GEN_PROMPT):
            raise TemplateError(f"template {self.name}/{self.version} must end with an open assistant turn")
        body = self.text[: -len(_GEN_PROMPT)]
        blocks = list(_BLOCK.finditer(body))
        if not blocks or "".join(b.group(0) for b in blocks) != body:
            raise TemplateError(f"template {self.name}/{self.version} is not a sequence of ChatML turns")
        out = []
        for b in blocks:
            content = b.group(2)
            content = content[:-1] if content.endswith("\n") else content
            out.append(Message(b.group(1), _fill(content, values, self.slots)))
        return tuple(out)


def _fill(text: str, values: Mapping[str, str], slots: tuple[str, ...]) -> str:
    missing = [s for s in slots if s not in values]
    if missing:
        raise TemplateError(f"missing slot value(s): {missing}")
    return _SLOT.sub(lambda m: str(values[m.group(1)]), text)


def load_template(
    name: str,
    version: str = "v1",
    *,
    path: Path | str | None = None,
    expected_sha256: str | None = None,
) -> PromptTemplate:
    """Load a template and verify it against its pinned hash.

    ``path`` overrides the bundled file; ``expected_sha256`` overrides the
    pin (needed for custom templates).
    """
    if path is not None:
        raw = Path(path).read_bytes()
    else:
        raw = resources.files(__name__).joinpath(f"{name}_{version}.txt").read_bytes()
    text = raw.decode("utf-8")
    tpl = PromptTemplate(name, version, text)
    want = expected_sha256 or PINNED.get((name, version))
    if want is None:
        raise TemplateMismatchError(f"no pinned hash for template {name}/{version}; pass expected_sha256")
    if tpl.sha256 != want:
        raise TemplateMismatchError(
            f"template {name}/{version} hash {tpl.sha256} does not match configured {want}"
        )
    return tpl


def label_slots(correctness: bool, reasoning_type: str, misconception: str) -> dict[str, str]:
    return {"correctness": str(correctness), "reasoning_type": reasoning_type, "misconception": misconception}

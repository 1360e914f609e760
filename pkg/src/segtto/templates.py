"""Prompt template pools.

DEFAULT_PROMPT_TEMPLATES seeds the learnable prompts. IMAGENET_TEMPLATES is
the standard 80-entry zero-shot pool; the fixed-width text bank variant and
any learnable prompt beyond the defaults draw from it.
"""

from __future__ import annotations

DEFAULT_PROMPT_TEMPLATES = (
    "a photo of a {}",
    "a close-up photo of a {}",
    "a bright photo of the {}",
    "a cropped photo of a {}",
    "a dark photo of the {}",
)

IMAGENET_TEMPLATES = (
    "a bad photo of a {}.",
    "a photo of many {}.",
    "a sculpture of a {}.",
    "a photo of the hard to see {}.",
    "a low resolution photo of the {}.",
    "a rendering of a {}.",
    "graffiti of a {}.",
    "a bad photo of the {}.",
    "a cropped photo of the {}.",
    "a tattoo of a {}.",
    "the embroidered {}.",
    "a photo of a hard to see {}.",
    "a bright photo of a {}.",
    "a photo of a clean {}.",
    "a photo of a dirty {}.",
    "a dark photo of the {}.",
    "a drawing of a {}.",
    "a photo of my {}.",
    "the plastic {}.",
    "a photo of the cool {}.",
    "a close-up photo of a {}.",
    "a black and white photo of the {}.",
    "a painting of the {}.",
    "a painting of a {}.",
    "a pixelated photo of the {}.",
    "a sculpture of the {}.",
    "a bright photo of the {}.",
    "a cropped photo of a {}.",
    "a plastic {}.",
    "a photo of the dirty {}.",
    "a jpeg corrupted photo of a {}.",
    "a blurry photo of the {}.",
    "a photo of the {}.",
    "a good photo of the {}.",
    "a rendering of the {}.",
    "a {} in a video game.",
    "a photo of one {}.",
    "a doodle of a {}.",
    "a close-up photo of the {}.",
    "a photo of a {}.",
    "the origami {}.",
    "the {} in a video game.",
    "a sketch of a {}.",
    "a doodle of the {}.",
    "a origami {}.",
    "a low resolution photo of a {}.",
    "the toy {}.",
    "a rendition of the {}.",
    "a photo of the clean {}.",
    "a photo of a large {}.",
    "a rendition of a {}.",
    "a photo of a nice {}.",
    "a photo of a weird {}.",
    "a blurry photo of a {}.",
    "a cartoon {}.",
    "art of a {}.",
    "a sketch of the {}.",
    "a embroidered {}.",
    "a pixelated photo of a {}.",
    "itap of the {}.",
    "a jpeg corrupted photo of the {}.",
    "a good photo of a {}.",
    "a plushie {}.",
    "a photo of the nice {}.",
    "a photo of the small {}.",
    "a photo of the weird {}.",
    "the cartoon {}.",
    "art of the {}.",
    "a drawing of the {}.",
    "a photo of the large {}.",
    "a black and white photo of a {}.",
    "the plushie {}.",
    "a dark photo of a {}.",
    "itap of a {}.",
    "graffiti of the {}.",
    "a toy {}.",
    "itap of my {}.",
    "a photo of a cool {}.",
    "a photo of a small {}.",
    "a tattoo of the {}.",
)

TEMPLATE_POOL_WIDTH = len(IMAGENET_TEMPLATES)
assert TEMPLATE_POOL_WIDTH == 80


def template_prefix(template: str) -> str:
    """Text before the category slot, e.g. 'a photo of a {}.' -> 'a photo of a'."""
    head, _, _ = template.partition("{}")
    head = head.strip()
    if not head:
        raise ValueError(f"template {template!r} has no usable prefix")
    return head


def learnable_templates(prompt_count: int) -> tuple[str, ...]:
    """The first prompt_count templates: the defaults, then unseen pool entries."""
    if prompt_count < 1:
        raise ValueError(f"prompt_count must be >= 1, got {prompt_count}")
    pool = list(DEFAULT_PROMPT_TEMPLATES)
    seen = {template_prefix(t) for t in pool}
    for template in IMAGENET_TEMPLATES:
        if len(pool) >= prompt_count:
            break
        prefix = template_prefix(template)
        if prefix not in seen:
            pool.append(template)
            seen.add(prefix)
    if len(pool) < prompt_count:
        raise ValueError(f"template pool exhausted at {len(pool)} < {prompt_count}")
    return tuple(pool[:prompt_count])

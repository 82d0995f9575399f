"""Fixed 16-color overlay palette: 14 classes plus excluded/unlabeled.

docs/palette.md documents the exact RGB values; the legend in the browser
UI must byte-match this table.
"""

CLASS_PALETTE: dict[str, tuple[int, int, int]] = {
    "goblet": (31, 119, 180),
    "enteroendocrine": (255, 127, 14),
    "enterocyte": (44, 160, 44),
    "fibroblast": (214, 39, 40),
    "stromal_undetermined": (148, 103, 189),
    "myeloid": (140, 86, 75),
    "helper_t": (227, 119, 194),
    "cytotoxic_t": (188, 189, 34),
    "t_cell_receptor": (23, 190, 207),
    "monocyte": (174, 199, 232),
    "macrophage": (255, 187, 120),
    "b_cell": (152, 223, 138),
    "leukocyte": (255, 152, 150),
    "progenitor": (197, 176, 213),
    "excluded": (64, 64, 64),
    "unlabeled": (160, 160, 160),
}

POSITIVE_COLOR = (0, 200, 0)
NEGATIVE_COLOR = (128, 128, 128)


def palette_markdown() -> str:
    lines = [
        "# Overlay palette",
        "",
        "Class-layer tile colors. Background pixels are fully transparent.",
        "",
        "| outcome | R | G | B | hex |",
        "|---|---|---|---|---|",
    ]
    for name, (r, g, b) in CLASS_PALETTE.items():
        lines.append(f"| {name} | {r} | {g} | {b} | #{r:02x}{g:02x}{b:02x} |")
    lines += [
        "",
        "Positivity-layer colors:",
        "",
        "| call | R | G | B | hex |",
        "|---|---|---|---|---|",
        "| positive | {0} | {1} | {2} | #{0:02x}{1:02x}{2:02x} |".format(*POSITIVE_COLOR),
        "| negative | {0} | {1} | {2} | #{0:02x}{1:02x}{2:02x} |".format(*NEGATIVE_COLOR),
        "",
    ]
    return "\n".join(lines)

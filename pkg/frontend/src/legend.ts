/** Overlay palette mirror; must byte-match docs/palette.md. */

export type Rgb = readonly [number, number, number];

export const CLASS_PALETTE: ReadonlyArray<[string, Rgb]> = [
  ["goblet", [31, 119, 180]],
  ["enteroendocrine", [255, 127, 14]],
  ["enterocyte", [44, 160, 44]],
  ["fibroblast", [214, 39, 40]],
  ["stromal_undetermined", [148, 103, 189]],
  ["myeloid", [140, 86, 75]],
  ["helper_t", [227, 119, 194]],
  ["cytotoxic_t", [188, 189, 34]],
  ["t_cell_receptor", [23, 190, 207]],
  ["monocyte", [174, 199, 232]],
  ["macrophage", [255, 187, 120]],
  ["b_cell", [152, 223, 138]],
  ["leukocyte", [255, 152, 150]],
  ["progenitor", [197, 176, 213]],
  ["excluded", [64, 64, 64]],
  ["unlabeled", [160, 160, 160]],
];

export const POSITIVE_COLOR: Rgb = [0, 200, 0];
export const NEGATIVE_COLOR: Rgb = [128, 128, 128];

export function rgbHex([r, g, b]: Rgb): string {
  const h = (v: number) => v.toString(16).padStart(2, "0");
  return `#${h(r)}${h(g)}${h(b)}`;
}

/** Regenerate the palette document from the constants above. */
export function paletteMarkdown(): string {
  const lines = [
    "# Overlay palette",
    "",
    "Class-layer tile colors. Background pixels are fully transparent.",
    "",
    "| outcome | R | G | B | hex |",
    "|---|---|---|---|---|",
  ];
  for (const [name, [r, g, b]] of CLASS_PALETTE) {
    lines.push(`| ${name} | ${r} | ${g} | ${b} | ${rgbHex([r, g, b])} |`);
  }
  lines.push(
    "",
    "Positivity-layer colors:",
    "",
    "| call | R | G | B | hex |",
    "|---|---|---|---|---|",
    `| positive | ${POSITIVE_COLOR.join(" | ")} | ${rgbHex(POSITIVE_COLOR)} |`,
    `| negative | ${NEGATIVE_COLOR.join(" | ")} | ${rgbHex(NEGATIVE_COLOR)} |`,
    "",
  );
  return lines.join("\n");
}

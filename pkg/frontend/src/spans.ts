/**
 * Span selection utilities: word-boundary snapping (the same rule the
 * server uses to re-extract passages), overlap checks, and the
 * displayed-text hash that guards against drift between what the rater
 * saw and what the server stores.
 */

export interface CharSpan {
  start: number;
  end: number; // end-exclusive
}

function isWordChar(ch: string): boolean {
  return /[A-Za-z0-9]/.test(ch);
}

/**
 * Snap a raw selection to whole-word boundaries: trim the edges inward
 * to word characters, then expand outward to cover the full words.
 * Returns null when the selection contains no word characters.
 */
export function snapToWordBoundaries(
  text: string,
  rawStart: number,
  rawEnd: number,
): CharSpan | null {
  let start = Math.max(0, Math.min(rawStart, text.length));
  let end = Math.max(start, Math.min(rawEnd, text.length));
  while (start < end && !isWordChar(text[start]!)) start += 1;
  while (end > start && !isWordChar(text[end - 1]!)) end -= 1;
  if (start >= end) return null;
  while (start > 0 && isWordChar(text[start - 1]!)) start -= 1;
  while (end < text.length && isWordChar(text[end]!)) end += 1;
  return { start, end };
}

/** True when the two spans share at least one character. */
export function spansOverlap(a: CharSpan, b: CharSpan): boolean {
  return a.start < b.end && b.start < a.end;
}

/** True when `span` overlaps none of `existing`. */
export function spanIsFree(span: CharSpan, existing: readonly CharSpan[]): boolean {
  return existing.every((other) => !spansOverlap(span, other));
}

/** SHA-256 hex digest of UTF-8 text via WebCrypto. */
export async function sha256Hex(text: string): Promise<string> {
  const bytes = new TextEncoder().encode(text);
  const digest = await globalThis.crypto.subtle.digest("SHA-256", bytes);
  return Array.from(new Uint8Array(digest))
    .map((byte) => byte.toString(16).padStart(2, "0"))
    .join("");
}

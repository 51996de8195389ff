// Location paths arrive root-first ("w", "w-0", "w-0-1", ...).  Disclosure
// level N means the N finest segments were cut off before the reading left
// the manager, so the breadcrumb both renders what came back and predicts
// how much a proposed level would shorten it.

export function truncatePath(path: string[], level: number): string[] {
  if (!path.length) return [];
  const k = Math.max(0, Math.min(level, path.length - 1));
  return k === 0 ? path.slice() : path.slice(0, path.length - k);
}

/** How many segments a disclose-at-level drops relative to the full path. */
export function segmentsHidden(fullDepth: number, level: number): number {
  if (fullDepth <= 0) return 0;
  return Math.max(0, Math.min(level, fullDepth - 1));
}

export function renderBreadcrumb(path: string[]): string {
  return path.join(" › ");
}

/** "3 of 6 segments shown" style caption for the policy preview. */
export function disclosureCaption(fullDepth: number, level: number): string {
  const hidden = segmentsHidden(fullDepth, level);
  const shown = fullDepth - hidden;
  if (hidden === 0) return `full path (${fullDepth} segments)`;
  return `${shown} of ${fullDepth} segments shown`;
}

// Client-side mirror of the server's policy-set validation so the editor
// can flag mistakes inline before a PUT; the server remains authoritative
// and re-checks everything.

import type { Policy, TimeWindow } from "./model.js";

export const MINUTES_PER_DAY = 1440;
export const WEEK_MINUTES = 7 * MINUTES_PER_DAY;
const FULL_WEEK: TimeWindow = { days: [0, 1, 2, 3, 4, 5, 6], start: 0, end: MINUTES_PER_DAY };

export function windowValid(w: TimeWindow): boolean {
  if (!w.days.length || w.days.some((d) => d < 0 || d > 6 || !Number.isInteger(d))) {
    return false;
  }
  return Number.isInteger(w.start) && Number.isInteger(w.end)
    && w.start >= 0 && w.end <= MINUTES_PER_DAY && w.start < w.end;
}

/** Weekly minutes a window list is in force; empty means always. */
export function weeklyMinutes(windows: TimeWindow[]): number {
  if (!windows.length) return WEEK_MINUTES;
  return windows.reduce((sum, w) => sum + w.days.length * (w.end - w.start), 0);
}

export function windowsOverlap(a: TimeWindow[], b: TimeWindow[]): boolean {
  const wa = a.length ? a : [FULL_WEEK];
  const wb = b.length ? b : [FULL_WEEK];
  for (const x of wa) {
    for (const y of wb) {
      const shareDay = x.days.some((d) => y.days.includes(d));
      // half-open intervals: [540, 600) and [600, 660) do not overlap
      if (shareDay && x.start < y.end && y.start < x.end) return true;
    }
  }
  return false;
}

export interface PolicyProblem {
  policyId: number | null;
  message: string;
}

/**
 * Everything the server would refuse to save: duplicate ids, malformed
 * windows, levels deeper than the hierarchy allows, unknown zones, and
 * pairs of equal specificity (same requester and zone, equal coverage,
 * overlapping windows) that could never be ranked against each other.
 */
export function validatePolicySet(policies: Policy[], hierarchyDepth: number,
                                  knownZones?: Set<string>): PolicyProblem[] {
  const problems: PolicyProblem[] = [];
  const seen = new Set<number>();
  for (const p of policies) {
    if (seen.has(p.id)) {
      problems.push({ policyId: p.id, message: `duplicate policy id ${p.id}` });
    }
    seen.add(p.id);
    if (!Number.isInteger(p.level) || p.level < 0) {
      problems.push({ policyId: p.id, message: `bad level ${p.level}` });
    } else if (p.action === "disclose" && p.level > hierarchyDepth - 1) {
      problems.push({
        policyId: p.id,
        message: `level ${p.level} exceeds hierarchy depth ${hierarchyDepth} - 1`,
      });
    }
    for (const w of p.windows) {
      if (!windowValid(w)) {
        problems.push({ policyId: p.id, message: "malformed time window" });
        break;
      }
    }
    if (p.zone !== null && knownZones && !knownZones.has(p.zone)) {
      problems.push({ policyId: p.id, message: `unknown zone "${p.zone}"` });
    }
  }
  for (let i = 0; i < policies.length; i++) {
    for (let j = i + 1; j < policies.length; j++) {
      const a = policies[i];
      const b = policies[j];
      if (a.mtid === b.mtid && a.requester === b.requester && a.zone === b.zone
          && weeklyMinutes(a.windows) === weeklyMinutes(b.windows)
          && windowsOverlap(a.windows, b.windows)) {
        problems.push({
          policyId: b.id,
          message: `policies ${a.id} and ${b.id} overlap at equal specificity`,
        });
      }
    }
  }
  return problems;
}

/** Next free id for the editor's "add policy" button. */
export function nextPolicyId(policies: Policy[]): number {
  return policies.reduce((top, p) => Math.max(top, p.id + 1), 0);
}

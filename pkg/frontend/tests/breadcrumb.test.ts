import { describe, expect, it } from "vitest";

import {
  disclosureCaption,
  renderBreadcrumb,
  segmentsHidden,
  truncatePath,
} from "../src/breadcrumb.js";

const PATH = ["w", "w-0", "w-0-1", "w-0-1-2", "w-0-1-2-0", "w-0-1-2-0-1"];

describe("truncatePath", () => {
  it("returns the full path at level zero", () => {
    expect(truncatePath(PATH, 0)).toEqual(PATH);
  });

  it("drops exactly k segments from the fine end", () => {
    expect(truncatePath(PATH, 2)).toEqual(PATH.slice(0, 4));
    expect(truncatePath(PATH, 5)).toEqual(["w"]);
  });

  it("raising the level from 0 to 2 shortens the crumb by exactly 2 segments", () => {
    const before = truncatePath(PATH, 0);
    const after = truncatePath(PATH, 2);
    expect(before.length - after.length).toBe(2);
    expect(before.slice(0, after.length)).toEqual(after);
  });

  it("clamps past the root instead of emptying the path", () => {
    expect(truncatePath(PATH, 99)).toEqual(["w"]);
    expect(truncatePath(PATH, -3)).toEqual(PATH);
    expect(truncatePath([], 2)).toEqual([]);
  });

  it("does not mutate its input", () => {
    const copy = [...PATH];
    truncatePath(copy, 3);
    expect(copy).toEqual(PATH);
  });
});

describe("segmentsHidden / caption", () => {
  it("mirrors the clamp", () => {
    expect(segmentsHidden(6, 0)).toBe(0);
    expect(segmentsHidden(6, 2)).toBe(2);
    expect(segmentsHidden(6, 9)).toBe(5);
    expect(segmentsHidden(0, 3)).toBe(0);
  });

  it("describes the disclosure", () => {
    expect(disclosureCaption(6, 0)).toBe("full path (6 segments)");
    expect(disclosureCaption(6, 2)).toBe("4 of 6 segments shown");
  });
});

describe("renderBreadcrumb", () => {
  it("joins with the separator glyph", () => {
    expect(renderBreadcrumb(["w", "w-1"])).toBe("w › w-1");
    expect(renderBreadcrumb([])).toBe("");
  });
});

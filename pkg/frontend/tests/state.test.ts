import { describe, expect, it } from "vitest";

import {
  UNSTYLED,
  applyAcknowledged,
  applyRejection,
  initialPanel,
  selectStyle,
  selectionEntries,
} from "../src/state.js";

describe("assignment panel state", () => {
  it("starts empty", () => {
    const panel = initialPanel();
    expect(panel.acknowledged).toEqual({});
    expect(panel.lastError).toBeNull();
  });

  it("local edits never touch the acknowledged assignment", () => {
    let panel = applyAcknowledged(initialPanel(), { "1": "red" });
    panel = selectStyle(panel, 1, "blue");
    panel = selectStyle(panel, 2, "red");
    expect(panel.acknowledged).toEqual({ "1": "red" });
    expect(selectionEntries(panel)).toEqual({ "1": "blue", "2": "red" });
  });

  it("unstyled selections are omitted from the PUT entries", () => {
    let panel = initialPanel();
    panel = selectStyle(panel, 0, UNSTYLED);
    panel = selectStyle(panel, 1, "red");
    expect(selectionEntries(panel)).toEqual({ "1": "red" });
  });

  it("a 2xx acknowledgement replaces the assignment and clears errors", () => {
    let panel = applyRejection(initialPanel(), "nope");
    panel = applyAcknowledged(panel, { "2": "blue" });
    expect(panel.acknowledged).toEqual({ "2": "blue" });
    expect(panel.lastError).toBeNull();
  });

  it("a rejection keeps the acknowledged assignment and surfaces the offender", () => {
    let panel = applyAcknowledged(initialPanel(), { "1": "red" });
    panel = selectStyle(panel, 1, "ghost");
    const before = { ...panel.acknowledged };
    panel = applyRejection(panel, "unknown style id 'ghost'", {
      class_id: "1",
      style_id: "ghost",
    });
    expect(panel.acknowledged).toEqual(before);
    expect(panel.lastError).toContain("ghost");
    expect(panel.lastError).toContain("class 1");
  });

  it("acknowledgement resyncs selections for edited classes", () => {
    let panel = applyAcknowledged(initialPanel(), {});
    panel = selectStyle(panel, 1, "red");
    panel = applyAcknowledged(panel, { "1": "red" });
    expect(panel.selection["1"]).toBe("red");
    panel = applyAcknowledged(panel, {});
    expect(panel.selection["1"]).toBe(UNSTYLED);
  });
});

import { describe, expect, it } from "vitest";

import { FpsTracker } from "../src/fps.js";

describe("FpsTracker", () => {
  it("reports 0 with no samples", () => {
    expect(new FpsTracker().fps()).toBe(0);
  });

  it("equals 1000 over the mean of the recorded intervals", () => {
    const tracker = new FpsTracker(30);
    const intervals = [40, 50, 60, 45, 55];
    intervals.forEach((ms) => tracker.record(ms));
    const mean = intervals.reduce((a, b) => a + b) / intervals.length;
    expect(tracker.fps()).toBeCloseTo(1000 / mean, 10);
  });

  it("only keeps the last N intervals", () => {
    const tracker = new FpsTracker(30);
    for (let i = 0; i < 100; i++) {
      tracker.record(1000); // stale slow samples
    }
    for (let i = 0; i < 30; i++) {
      tracker.record(50);
    }
    expect(tracker.count()).toBe(30);
    expect(tracker.fps()).toBeCloseTo(20, 6);
  });

  it("stays within 5% of the definitional value under jitter", () => {
    const tracker = new FpsTracker(30);
    const window: number[] = [];
    let seed = 1234;
    const rand = () => {
      seed = (seed * 1103515245 + 12345) % 2 ** 31;
      return seed / 2 ** 31;
    };
    for (let i = 0; i < 120; i++) {
      const interval = 40 + rand() * 20;
      tracker.record(interval);
      window.push(interval);
      if (window.length > 30) window.shift();
    }
    const expected = 1000 / (window.reduce((a, b) => a + b) / window.length);
    expect(Math.abs(tracker.fps() - expected) / expected).toBeLessThan(0.05);
  });
});

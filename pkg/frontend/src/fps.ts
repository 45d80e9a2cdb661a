/** Rolling FPS readout: 1000 / mean of the last N frame intervals. */
export class FpsTracker {
  private intervals: number[] = [];

  constructor(private readonly windowSize: number = 30) {}

  record(intervalMs: number): void {
    this.intervals.push(intervalMs);
    if (this.intervals.length > this.windowSize) {
      this.intervals.shift();
    }
  }

  fps(): number {
    if (this.intervals.length === 0) {
      return 0;
    }
    const mean = this.intervals.reduce((a, b) => a + b, 0) / this.intervals.length;
    return mean > 0 ? 1000 / mean : 0;
  }

  count(): number {
    return this.intervals.length;
  }
}

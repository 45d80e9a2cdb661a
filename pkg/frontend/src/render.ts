/** Draws streamed PNG frames onto a canvas; decode failures are counted
 * and skipped so one bad frame never kills the stream. */
export class CanvasRenderer {
  decodeErrors = 0;
  private drawing = false;

  constructor(private readonly canvas: HTMLCanvasElement) {}

  async draw(data: ArrayBuffer): Promise<void> {
    if (this.drawing) {
      return; // drop the frame rather than queue behind a slow decode
    }
    this.drawing = true;
    try {
      const bitmap = await createImageBitmap(new Blob([data], { type: "image/png" }));
      if (this.canvas.width !== bitmap.width || this.canvas.height !== bitmap.height) {
        this.canvas.width = bitmap.width;
        this.canvas.height = bitmap.height;
      }
      const ctx = this.canvas.getContext("2d");
      ctx?.drawImage(bitmap, 0, 0);
      bitmap.close();
    } catch (err) {
      this.decodeErrors += 1;
      console.warn("frame decode failed", err);
    } finally {
      this.drawing = false;
    }
  }
}

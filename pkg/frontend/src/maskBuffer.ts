/**
 * Pure mask pixel buffer backing the brush canvas.
 *
 * One byte per pixel, 1 = edit region, 0 = preserve. Resolution always
 * equals the source image resolution; the service owns all resampling.
 * Everything here is DOM-free so it can be unit-tested directly.
 */

export class MaskBuffer {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8Array;

  constructor(width: number, height: number, data?: Uint8Array) {
    if (width < 1 || height < 1) {
      throw new Error(`mask dimensions must be positive, got ${width}x${height}`);
    }
    if (data && data.length !== width * height) {
      throw new Error(`buffer length ${data.length} != ${width * height}`);
    }
    this.width = width;
    this.height = height;
    this.data = data ?? new Uint8Array(width * height);
  }

  clone(): MaskBuffer {
    return new MaskBuffer(this.width, this.height, this.data.slice());
  }

  clear(): void {
    this.data.fill(0);
  }

  get(x: number, y: number): number {
    return this.data[y * this.width + x] ?? 0;
  }

  coverage(): number {
    let on = 0;
    for (const v of this.data) on += v;
    return on / this.data.length;
  }

  /** Stamp a filled disc; value 1 paints, 0 erases. */
  stampDisc(cx: number, cy: number, radius: number, value: 0 | 1): void {
    const r2 = radius * radius;
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) {
          this.data[y * this.width + x] = value;
        }
      }
    }
  }

  /** Stamp discs along a segment so fast strokes leave no gaps. */
  strokeSegment(x0: number, y0: number, x1: number, y1: number,
                radius: number, value: 0 | 1): void {
    const dist = Math.hypot(x1 - x0, y1 - y0);
    const steps = Math.max(1, Math.ceil(dist / Math.max(1, radius / 2)));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.stampDisc(x0 + t * (x1 - x0), y0 + t * (y1 - y0), radius, value);
    }
  }

  /**
   * Grayscale plane for PNG export: 255 = edit region, 0 = preserve,
   * exactly the service's on-disk mask convention.
   */
  toGrayscale(): Uint8Array {
    const out = new Uint8Array(this.data.length);
    for (let i = 0; i < this.data.length; i++) {
      out[i] = this.data[i] ? 255 : 0;
    }
    return out;
  }

  /** Rebuild from a grayscale plane (anything >= 128 counts as edit). */
  static fromGrayscale(width: number, height: number, gray: Uint8Array): MaskBuffer {
    const buf = new MaskBuffer(width, height);
    for (let i = 0; i < gray.length; i++) {
      buf.data[i] = (gray[i] ?? 0) >= 128 ? 1 : 0;
    }
    return buf;
  }
}

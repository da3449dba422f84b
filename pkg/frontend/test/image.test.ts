import { describe, expect, it } from 'vitest';

import { decodePortableImage, encodePpm, gridStats, RgbImage } from '../src/image.js';

function solidImage(r: number, g: number, b: number, w = 8, h = 8): RgbImage {
  const pixels = new Float64Array(w * h * 3);
  for (let i = 0; i < w * h; i++) {
    pixels[i * 3] = r;
    pixels[i * 3 + 1] = g;
    pixels[i * 3 + 2] = b;
  }
  return { width: w, height: h, pixels };
}

describe('portable image codec', () => {
  it('round-trips P6', () => {
    const img = solidImage(1, 0.5, 0);
    const decoded = decodePortableImage(encodePpm(img));
    expect(decoded.width).toBe(8);
    expect(decoded.height).toBe(8);
    expect(decoded.pixels[0]).toBeCloseTo(1, 2);
    expect(decoded.pixels[1]).toBeCloseTo(0.5, 2);
    expect(decoded.pixels[2]).toBeCloseTo(0, 2);
  });

  it('handles header comments', () => {
    const buf = Buffer.concat([
      Buffer.from('P6\n# a comment\n2 1\n255\n', 'ascii'),
      Buffer.from([255, 0, 0, 0, 255, 0]),
    ]);
    const img = decodePortableImage(buf);
    expect(img.width).toBe(2);
    expect(img.pixels[0]).toBeCloseTo(1, 5);
    expect(img.pixels[4]).toBeCloseTo(1, 5);
  });

  it('replicates gray into RGB for P5', () => {
    const buf = Buffer.concat([
      Buffer.from('P5\n1 1\n255\n', 'ascii'),
      Buffer.from([128]),
    ]);
    const img = decodePortableImage(buf);
    expect(img.pixels[0]).toBe(img.pixels[1]);
    expect(img.pixels[1]).toBe(img.pixels[2]);
  });

  it('rejects truncated rasters and foreign formats', () => {
    const short = Buffer.from('P6\n4 4\n255\n123', 'ascii');
    expect(() => decodePortableImage(short)).toThrow('truncated');
    expect(() => decodePortableImage(Buffer.from('\x89PNG...', 'binary')))
      .toThrow('unsupported');
  });
});

describe('grid statistics', () => {
  it('reports per-cell means for a solid image', () => {
    const cells = gridStats(solidImage(0.2, 0.4, 0.6), 2, 2);
    expect(cells).toHaveLength(4);
    for (const stats of cells) {
      expect(stats[0]).toBeCloseTo(0.2, 10);
      expect(stats[1]).toBeCloseTo(0.4, 10);
      expect(stats[2]).toBeCloseTo(0.6, 10);
      expect(stats[3]).toBeCloseTo(0, 6); // no variance (up to float cancellation)
    }
  });
});

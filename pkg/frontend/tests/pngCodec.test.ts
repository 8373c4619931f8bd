import { inflateSync } from "node:zlib";

import { describe, expect, it } from "vitest";

import {
  base64ToBytes,
  bytesToBase64,
  crc32,
  encodeGrayPng,
  parsePng,
} from "../src/pngCodec";

describe("crc32", () => {
  it("matches the published check value", () => {
    // CRC-32 of "123456789" is the standard algorithm check constant
    expect(crc32(new TextEncoder().encode("123456789"))).toBe(0xcbf43926);
  });
});

describe("encodeGrayPng", () => {
  it("emits a well-formed grayscale PNG", () => {
    const gray = new Uint8Array([0, 255, 128, 7]);
    const png = encodeGrayPng(2, 2, gray);
    const info = parsePng(png);
    expect(info.width).toBe(2);
    expect(info.height).toBe(2);
    expect(info.bitDepth).toBe(8);
    expect(info.colorType).toBe(0);
  });

  it("round-trips pixel data through a real zlib inflate", () => {
    const width = 23;
    const height = 9;
    const gray = new Uint8Array(width * height);
    for (let i = 0; i < gray.length; i++) gray[i] = (i * 37) % 256;
    const info = parsePng(encodeGrayPng(width, height, gray));
    const raw = inflateSync(Buffer.from(info.idat));
    expect(raw.length).toBe(height * (width + 1));
    for (let y = 0; y < height; y++) {
      expect(raw[y * (width + 1)]).toBe(0); // filter byte: none
      for (let x = 0; x < width; x++) {
        expect(raw[y * (width + 1) + 1 + x]).toBe(gray[y * width + x]);
      }
    }
  });

  it("is deterministic byte for byte", () => {
    const gray = new Uint8Array(64).fill(255);
    const a = encodeGrayPng(8, 8, gray);
    const b = encodeGrayPng(8, 8, gray);
    expect(Buffer.from(a).equals(Buffer.from(b))).toBe(true);
  });

  it("handles planes larger than one stored deflate block", () => {
    const width = 300;
    const height = 300; // raw stream ~90kB > 65535-byte block limit
    const gray = new Uint8Array(width * height).fill(200);
    const info = parsePng(encodeGrayPng(width, height, gray));
    const raw = inflateSync(Buffer.from(info.idat));
    expect(raw.length).toBe(height * (width + 1));
    expect(raw[1]).toBe(200);
  });

  it("rejects mismatched plane sizes", () => {
    expect(() => encodeGrayPng(4, 4, new Uint8Array(15))).toThrow();
  });

  it("parsePng rejects corrupted bytes", () => {
    const png = encodeGrayPng(4, 4, new Uint8Array(16));
    png[20] = (png[20] ?? 0) ^ 0xff; // flip a bit inside IHDR
    expect(() => parsePng(png)).toThrow(/CRC/);
    expect(() => parsePng(new Uint8Array([1, 2, 3]))).toThrow(/signature/);
  });
});

describe("base64 helpers", () => {
  it("round-trips binary data", () => {
    const bytes = new Uint8Array(999);
    for (let i = 0; i < bytes.length; i++) bytes[i] = (i * 13) % 256;
    const back = base64ToBytes(bytesToBase64(bytes));
    expect(Buffer.from(back).equals(Buffer.from(bytes))).toBe(true);
  });
});

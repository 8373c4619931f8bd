/**
 * Minimal deterministic PNG writer for 8-bit grayscale masks.
 *
 * Canvas toBlob() output varies across browsers; mask bytes sent to the
 * service must not. This encoder emits one IHDR/IDAT/IEND stream with the
 * zlib payload as stored (uncompressed) deflate blocks, which every PNG
 * reader accepts. A matching chunk parser covers tests and mask import.
 */

const SIGNATURE = new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10]);

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (const b of bytes) {
    c = (CRC_TABLE[(c ^ b) & 0xff] ?? 0) ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (const byte of bytes) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function be32(value: number): Uint8Array {
  return new Uint8Array([
    (value >>> 24) & 0xff, (value >>> 16) & 0xff,
    (value >>> 8) & 0xff, value & 0xff,
  ]);
}

function chunk(type: string, payload: Uint8Array): Uint8Array {
  const typeBytes = new TextEncoder().encode(type);
  const body = new Uint8Array(typeBytes.length + payload.length);
  body.set(typeBytes);
  body.set(payload, typeBytes.length);
  const out = new Uint8Array(4 + body.length + 4);
  out.set(be32(payload.length));
  out.set(body, 4);
  out.set(be32(crc32(body)), 4 + body.length);
  return out;
}

/** zlib stream with stored deflate blocks (max 65535 bytes each). */
function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  const max = 65535;
  for (let off = 0; off < raw.length; off += max) {
    const slice = raw.subarray(off, Math.min(off + max, raw.length));
    const final = off + max >= raw.length ? 1 : 0;
    const header = new Uint8Array([
      final,
      slice.length & 0xff, (slice.length >>> 8) & 0xff,
      ~slice.length & 0xff, (~slice.length >>> 8) & 0xff,
    ]);
    blocks.push(header, slice);
  }
  blocks.push(be32(adler32(raw)));
  return concat(blocks);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.length;
  }
  return out;
}

/** Encode an 8-bit grayscale plane (row-major) as a PNG. */
export function encodeGrayPng(width: number, height: number,
                              gray: Uint8Array): Uint8Array {
  if (gray.length !== width * height) {
    throw new Error(`plane length ${gray.length} != ${width * height}`);
  }
  const ihdr = new Uint8Array(13);
  ihdr.set(be32(width));
  ihdr.set(be32(height), 4);
  ihdr[8] = 8; // bit depth
  ihdr[9] = 0; // color type: grayscale
  // compression 0, filter 0, interlace 0 already zeroed

  const raw = new Uint8Array(height * (width + 1)); // filter byte per row
  for (let y = 0; y < height; y++) {
    raw.set(gray.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  return concat([
    SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

export interface PngInfo {
  width: number;
  height: number;
  bitDepth: number;
  colorType: number;
  idat: Uint8Array;
}

/** Parse chunk structure and validate CRCs (no inflate). */
export function parsePng(bytes: Uint8Array): PngInfo {
  for (let i = 0; i < SIGNATURE.length; i++) {
    if (bytes[i] !== SIGNATURE[i]) {
      throw new Error("not a PNG: bad signature");
    }
  }
  let off = SIGNATURE.length;
  let info: Omit<PngInfo, "idat"> | null = null;
  const idatParts: Uint8Array[] = [];
  while (off < bytes.length) {
    const len = ((bytes[off]! << 24) | (bytes[off + 1]! << 16)
      | (bytes[off + 2]! << 8) | bytes[off + 3]!) >>> 0;
    const type = String.fromCharCode(
      bytes[off + 4]!, bytes[off + 5]!, bytes[off + 6]!, bytes[off + 7]!);
    const body = bytes.subarray(off + 4, off + 8 + len);
    const crc = ((bytes[off + 8 + len]! << 24) | (bytes[off + 9 + len]! << 16)
      | (bytes[off + 10 + len]! << 8) | bytes[off + 11 + len]!) >>> 0;
    if (crc32(body) !== crc) {
      throw new Error(`bad CRC in ${type} chunk`);
    }
    const payload = body.subarray(4);
    if (type === "IHDR") {
      info = {
        width: ((payload[0]! << 24) | (payload[1]! << 16) | (payload[2]! << 8) | payload[3]!) >>> 0,
        height: ((payload[4]! << 24) | (payload[5]! << 16) | (payload[6]! << 8) | payload[7]!) >>> 0,
        bitDepth: payload[8]!,
        colorType: payload[9]!,
      };
    } else if (type === "IDAT") {
      idatParts.push(payload);
    } else if (type === "IEND") {
      break;
    }
    off += 12 + len;
  }
  if (!info) {
    throw new Error("PNG has no IHDR chunk");
  }
  return { ...info, idat: concat(idatParts) };
}

export function bytesToBase64(bytes: Uint8Array): string {
  let binary = "";
  const step = 0x8000;
  for (let i = 0; i < bytes.length; i += step) {
    binary += String.fromCharCode(...bytes.subarray(i, i + step));
  }
  return btoa(binary);
}

export function base64ToBytes(b64: string): Uint8Array {
  const binary = atob(b64);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    out[i] = binary.charCodeAt(i);
  }
  return out;
}

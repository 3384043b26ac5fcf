// Byte-oriented rANS coder over 16-bit quantized frequency tables.
//
// Integer-only and byte-compatible with the scalic Python fallback coder:
// identical inputs must yield identical bytes on every platform.
//
// Coded-buffer wire format (all integers big-endian):
//   u32 symbol count | u32 payload length | u32 CRC-32 of payload | payload
//
// The encoder walks symbols in reverse emitting renorm bytes, appends the
// final 32-bit state, then reverses the whole byte sequence; the decoder
// reads the state from the first 4 bytes and consumes renorm bytes forward.

import { crc32 } from "./crc32";

export const PRECISION = 16;
export const PROB_SCALE = 1 << PRECISION;
export const RANS_L = 1 << 23;

const HEADER_BYTES = 12;
// renorm threshold factor: byte-wise renorm keeps the state in [L, 256*L)
const SHIFT = (RANS_L >>> PRECISION) << 8;

export interface CodedBuffer {
  data: Uint8Array;
  symbolCount: number;
  checksum: number;
}

/** Cumulative tables from per-symbol frequencies, each row summing to 2^16. */
export function buildTables(freqs: Uint32Array[] | number[][]): Uint32Array[] {
  const tables: Uint32Array[] = [];
  for (const row of freqs) {
    const cdf = new Uint32Array(row.length + 1);
    let acc = 0;
    for (let s = 0; s < row.length; s++) {
      const f = Number(row[s]);
      if (!Number.isInteger(f) || f <= 0) {
        throw new RangeError(`frequency must be a positive integer, got ${row[s]}`);
      }
      cdf[s] = acc;
      acc += f;
      cdf[s + 1] = acc;
    }
    if (acc !== PROB_SCALE) {
      throw new RangeError(`table must sum to ${PROB_SCALE}, got ${acc}`);
    }
    tables.push(cdf);
  }
  return tables;
}

export function encode(
  symbols: ArrayLike<number>,
  tables: Uint32Array[],
  tableIds: ArrayLike<number>,
): CodedBuffer {
  const n = symbols.length;
  if (tableIds.length !== n) {
    throw new RangeError(`need one table id per symbol: ${n} vs ${tableIds.length}`);
  }
  const out: number[] = [];
  let x = RANS_L;
  for (let i = n - 1; i >= 0; i--) {
    const cdf = tables[tableIds[i]];
    const s = symbols[i];
    if (s < 0 || s >= cdf.length - 1) {
      throw new RangeError(`symbol ${s} outside alphabet of size ${cdf.length - 1}`);
    }
    const lo = cdf[s];
    const f = cdf[s + 1] - lo;
    const xMax = SHIFT * f;
    while (x >= xMax) {
      out.push(x & 0xff);
      x = Math.floor(x / 256);
    }
    x = Math.floor(x / f) * PROB_SCALE + (x % f) + lo;
  }
  out.push(x & 0xff);
  out.push((x >>> 8) & 0xff);
  out.push((x >>> 16) & 0xff);
  out.push((x >>> 24) & 0xff);
  out.reverse();
  const data = Uint8Array.from(out);
  return { data, symbolCount: n, checksum: crc32(data) };
}

/** Stateful decoder supporting staged reads from one buffer. */
export class Decoder {
  private data: Uint8Array;
  private pos: number;
  private remaining: number;
  private state: number;

  constructor(buffer: CodedBuffer) {
    if (crc32(buffer.data) !== buffer.checksum) {
      throw new Error("coded buffer checksum mismatch");
    }
    if (buffer.data.length < 4) {
      throw new Error("coded buffer too short for decoder state");
    }
    this.data = buffer.data;
    this.state =
      buffer.data[0] * 0x1000000 + (buffer.data[1] << 16) + (buffer.data[2] << 8) + buffer.data[3];
    this.pos = 4;
    this.remaining = buffer.symbolCount;
  }

  get symbolsRemaining(): number {
    return this.remaining;
  }

  decode(tables: Uint32Array[], tableIds: ArrayLike<number>): Int32Array {
    const n = tableIds.length;
    if (n > this.remaining) {
      throw new RangeError(`requested ${n} symbols, only ${this.remaining} remain`);
    }
    const out = new Int32Array(n);
    let x = this.state;
    let pos = this.pos;
    const data = this.data;
    for (let i = 0; i < n; i++) {
      const cdf = tables[tableIds[i]];
      const slot = x & (PROB_SCALE - 1);
      // greatest s with cdf[s] <= slot
      let lo = 0;
      let hi = cdf.length - 1;
      while (hi - lo > 1) {
        const mid = (lo + hi) >>> 1;
        if (cdf[mid] <= slot) lo = mid;
        else hi = mid;
      }
      const f = cdf[lo + 1] - cdf[lo];
      x = f * Math.floor(x / PROB_SCALE) + slot - cdf[lo];
      while (x < RANS_L) {
        if (pos >= data.length) {
          throw new Error("coded buffer exhausted before all symbols decoded");
        }
        x = x * 256 + data[pos++];
      }
      out[i] = lo;
    }
    this.state = x;
    this.pos = pos;
    this.remaining -= n;
    return out;
  }
}

export function decode(
  buffer: CodedBuffer,
  tables: Uint32Array[],
  tableIds: ArrayLike<number>,
): Int32Array {
  if (tableIds.length !== buffer.symbolCount) {
    throw new RangeError(
      `buffer holds ${buffer.symbolCount} symbols, requested ${tableIds.length}`,
    );
  }
  return new Decoder(buffer).decode(tables, tableIds);
}

export function bufferToBytes(buf: CodedBuffer): Uint8Array {
  const out = new Uint8Array(HEADER_BYTES + buf.data.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, buf.symbolCount);
  view.setUint32(4, buf.data.length);
  view.setUint32(8, buf.checksum);
  out.set(buf.data, HEADER_BYTES);
  return out;
}

export function bufferFromBytes(raw: Uint8Array): CodedBuffer {
  if (raw.length < HEADER_BYTES) {
    throw new Error("coded buffer truncated: header incomplete");
  }
  const view = new DataView(raw.buffer, raw.byteOffset, raw.byteLength);
  const symbolCount = view.getUint32(0);
  const length = view.getUint32(4);
  const checksum = view.getUint32(8);
  if (raw.length !== HEADER_BYTES + length) {
    throw new Error(
      `coded buffer truncated: declared ${length} bytes, found ${raw.length - HEADER_BYTES}`,
    );
  }
  return { data: raw.subarray(HEADER_BYTES), symbolCount, checksum };
}

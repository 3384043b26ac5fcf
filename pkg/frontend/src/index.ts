export {
  CodedBuffer,
  Decoder,
  PRECISION,
  PROB_SCALE,
  RANS_L,
  buildTables,
  bufferFromBytes,
  bufferToBytes,
  decode,
  encode,
} from "./rans";
export { crc32 } from "./crc32";

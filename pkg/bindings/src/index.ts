export {
  HandLayer,
  ServeError,
  type ForwardResult,
  type JacobianBlocks,
  type ModelHandle,
  type SpawnOptions,
  type Stats,
} from "./client.js";
export { Opcode, Status, encodeFrame, toFloat64, fromFloat64 } from "./protocol.js";

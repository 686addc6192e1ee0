/** Worker entry: decodes CGSV bytes off the UI thread. */

import { CorruptContainerError, decodeContainer } from "./decoder.js";

interface DecodeRequest {
  id: number;
  bytes: ArrayBuffer;
}

self.onmessage = async (event: MessageEvent<DecodeRequest>) => {
  const { id, bytes } = event.data;
  try {
    const scene = await decodeContainer(new Uint8Array(bytes));
    const transfers = [
      scene.positions.buffer,
      scene.rotations.buffer,
      scene.logScales.buffer,
      scene.opacityLogits.buffer,
      scene.sh.buffer,
    ];
    (self as unknown as Worker).postMessage({ id, ok: true, scene }, transfers);
  } catch (err) {
    const message = err instanceof CorruptContainerError
      ? `corrupt container: ${err.message}`
      : `decode failed: ${String(err)}`;
    (self as unknown as Worker).postMessage({ id, ok: false, message });
  }
};

import assert from "node:assert/strict";
import { test } from "node:test";

import { assetPath, spawnLayer } from "./helpers.js";

test("10k create/forward/free cycles leave no live handles", async () => {
  const layer = await spawnLayer();
  const path = assetPath();
  try {
    const cycles = 10_000;
    for (let i = 0; i < cycles; i++) {
      const handle = await layer.modelLoad(path);
      const row = new Float64Array(handle.paramWidth);
      row.fill(1.0, handle.dofs, handle.dofs + 6);
      row[0] = i % 17; // vary the input a little
      const out = await layer.batchForward(handle, row, 1);
      assert.equal(out.joints.length, 3 * handle.joints);
      await layer.modelFree(handle);
    }
    const stats = await layer.stats();
    assert.equal(stats.liveHandles, 0);
    assert.equal(stats.cachedAssets, 1); // one parsed asset, shared
    assert.ok((await layer.version()).length > 0); // still responsive
  } finally {
    await layer.close();
  }
});

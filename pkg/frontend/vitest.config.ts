import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // the live-service test times real round trips on one core, so no
    // other test file may run beside it
    fileParallelism: false,
    hookTimeout: 300_000,
    testTimeout: 30_000,
  },
});

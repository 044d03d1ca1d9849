import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    testTimeout: 120_000,
    hookTimeout: 120_000,
    // one service process, sessions are cheap; keep the suite serial
    fileParallelism: false,
  },
});

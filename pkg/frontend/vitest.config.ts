import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    // the integration test boots the real service in a child process
    testTimeout: 30_000,
    hookTimeout: 45_000,
  },
});

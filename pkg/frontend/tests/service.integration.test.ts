/** Drives the real workspace service over HTTP: enqueue a capture the way
 * the mapper CLI does, review it through the client, check the export. */

import { spawn, type ChildProcess } from "node:child_process";
import { createServer } from "node:net";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ReviewClient } from "../src/api.js";
import { CaptureReview } from "../src/state.js";
import type { CaptureDoc } from "../src/types.js";

let service: ChildProcess | null = null;
let baseUrl = "";
let stderr = "";

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port assigned"));
        return;
      }
      probe.close(() => resolve(address.port));
    });
  });
}

async function waitHealthy(url: string, deadlineMs: number): Promise<void> {
  const deadline = Date.now() + deadlineMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${url}/healthz`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    if (service?.exitCode !== null) {
      throw new Error(`service exited early:\n${stderr}`);
    }
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error(`service never became healthy:\n${stderr}`);
}

beforeAll(async () => {
  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  service = spawn(
    "python3",
    ["-m", "groundmapper.cli", "serve", "--listen", `127.0.0.1:${port}`],
    { stdio: ["ignore", "ignore", "pipe"] },
  );
  service.stderr?.on("data", (chunk: Buffer) => {
    stderr += chunk.toString();
  });
  await waitHealthy(baseUrl, 30_000);
});

afterAll(() => {
  service?.kill("SIGTERM");
});

/** Plays the mapper side: login, open a changeset, enqueue one capture. */
async function seedQueue(): Promise<number> {
  const login = await fetch(`${baseUrl}/v1/login`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ user_id: "mapper", secret: "mapper" }),
  });
  expect(login.status).toBe(200);
  const { token } = (await login.json()) as { token: string };
  const auth = { authorization: `Bearer ${token}` };

  const opened = await fetch(`${baseUrl}/v1/workspaces/default/changesets`, {
    method: "POST",
    headers: auth,
  });
  expect(opened.status).toBe(201);
  const { changeset_id } = (await opened.json()) as { changeset_id: number };

  const square: Array<[number, number]> = [
    [0, 0],
    [0, 4],
    [4, 4],
    [4, 0],
  ];
  const capture: CaptureDoc = {
    capture_id: 1,
    timestamp: 1.0,
    instances: [10, 11, 12].map((id) => ({
      instance_id: id,
      class: "pole",
      polygon: square,
      centroid: [2, 2],
      location: { latitude: 47.6 + id * 1e-5, longitude: -122.3 },
    })),
    sidewalk: {
      width_m: 2.0,
      location: { latitude: 47.6, longitude: -122.3 },
      trapezoid: null,
    },
  };
  const queued = await fetch(`${baseUrl}/review/queue`, {
    method: "POST",
    headers: { ...auth, "content-type": "application/json" },
    body: JSON.stringify({
      workspace_id: "default",
      changeset_id,
      captures: [capture],
    }),
  });
  expect(queued.status).toBe(201);
  return changeset_id;
}

describe("review flow against the live service", () => {
  it("AGREE with one rejection stages exactly two of three instances", async () => {
    const changesetId = await seedQueue();
    const client = new ReviewClient(baseUrl, { userId: "mapper", secret: "mapper" });

    const queue = await client.queue();
    const mine = queue.find((item) => item.changeset_id === changesetId);
    expect(mine).toBeDefined();
    expect(mine?.classes).toEqual({ pole: 3 });
    expect(mine?.has_sidewalk).toBe(true);

    await client.lock(1);
    const review = new CaptureReview(await client.capture(1));
    expect(review.classNames()).toEqual(["pole"]);
    expect(review.isComplete()).toBe(false);

    review.decide("pole", "agree");
    review.toggleRejection("pole", 11);
    const outcome = await client.submit(review);
    // 2 surviving poles + 1 sidewalk node; single-capture batch closes
    expect(outcome.staged_nodes).toHaveLength(3);
    expect(outcome.changeset_closed).toBe(true);

    const exported = await client.exportGeo();
    const ours = exported.features.filter(
      (f) => f.properties.changeset_id === changesetId,
    );
    const poles = ours.filter((f) => f.properties.class === "pole");
    expect(poles).toHaveLength(2);
    expect(poles.map((f) => f.properties.instance_id).sort()).toEqual([10, 12]);
    const walks = ours.filter((f) => f.properties.class === "sidewalk");
    expect(walks).toHaveLength(1);
    expect(walks[0]?.properties.width).toBe(2.0);

    // the queue no longer offers the decided capture
    const after = await client.queue();
    expect(after.find((item) => item.changeset_id === changesetId)).toBeUndefined();
  });
});

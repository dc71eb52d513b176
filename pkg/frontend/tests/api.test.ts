import { describe, expect, it } from "vitest";

import { GatewayError } from "../src/api.js";
import { FakeGateway } from "./stub.js";
import fixture from "./fixtures/recorded-session.json";

function gateway(): FakeGateway {
  const stub = new FakeGateway(fixture.coding.status_final, fixture.coding.graph);
  stub.memory = {
    user: fixture.coding.memory_user.records,
    Coder: fixture.coding.memory_coder.records,
  };
  return stub;
}

describe("GatewayClient", () => {
  it("builds request URLs from one base setting", async () => {
    const stub = gateway();
    const client = stub.client();
    await client.fetchStatus("rec-coding");
    await client.fetchGraph("rec-coding");
    expect(stub.requests.map((r) => r.url)).toEqual([
      "http://stub:8787/sessions/rec-coding",
      "http://stub:8787/sessions/rec-coding/graph",
    ]);
  });

  it("strips trailing slashes from the base URL", async () => {
    const stub = gateway();
    const client = new (await import("../src/api.js")).GatewayClient("http://stub:8787///", {
      fetchImpl: stub.fetchImpl,
      socketFactory: stub.socketFactory,
    });
    await client.fetchStatus("x");
    expect(stub.requests[0].url).toBe("http://stub:8787/sessions/x");
  });

  it("sends the bearer token when configured", async () => {
    const stub = gateway();
    const recorded: Array<Record<string, string> | undefined> = [];
    const spying: typeof stub.fetchImpl = (url, init) => {
      recorded.push(init?.headers);
      return stub.fetchImpl(url, init);
    };
    const client = new (await import("../src/api.js")).GatewayClient("http://stub:8787", {
      fetchImpl: spying,
      socketFactory: stub.socketFactory,
      token: "sekret",
    });
    await client.fetchStatus("x");
    expect(recorded[0]?.authorization).toBe("Bearer sekret");
  });

  it("opens the event socket on the ws scheme with the token query", () => {
    const stub = gateway();
    stub.client("sekret").openEvents("rec-coding");
    expect(stub.sockets[0].url).toBe(
      "ws://stub:8787/sessions/rec-coding/events?token=sekret",
    );
  });

  it("returns accepted=false with the recorded detail on 409", async () => {
    const stub = gateway();
    stub.nextMessageStatus = 409;
    stub.conflictDetail = fixture.coding.conflict_body.detail;
    const result = await stub.client().sendMessage("rec-coding", "again");
    expect(result).toEqual({
      accepted: false,
      status: 409,
      detail: "session is finalized",
    });
  });

  it("scopes memory reads through the as query parameter", async () => {
    const stub = gateway();
    const records = await stub.client().fetchMemory("rec-coding", "Coder");
    expect(stub.requests[0].url).toContain("/memory?as=Coder");
    expect(records).toEqual(fixture.coding.memory_coder.records);
  });

  it("raises GatewayError for unexpected statuses", async () => {
    const stub = gateway();
    await expect(stub.client().fetchMemory("rec-coding", "Nobody")).rejects.toThrow(
      GatewayError,
    );
  });
});

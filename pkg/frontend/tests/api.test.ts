import { describe, expect, it } from "vitest";

import { ApiClient, NetworkError, ServiceError } from "../src/api.js";
import { FIXTURE_PREDICTION, stubService } from "./stub.js";

const PPM = new Blob(["P6\n1 1\n255\n\x00\x00\x00"], {
  type: "image/x-portable-pixmap",
});

describe("ApiClient.predict", () => {
  it("posts raw bytes with the image content type and parses the body", async () => {
    const stub = stubService();
    const api = new ApiClient(stub.fetch);
    const result = await api.predict(PPM, "image/x-portable-pixmap");
    expect(result).toEqual(FIXTURE_PREDICTION);
    expect(stub.requests).toHaveLength(1);
    expect(stub.requests[0].url).toBe("/api/predict");
    expect(stub.requests[0].init?.method).toBe("POST");
    expect((stub.requests[0].init?.headers as Record<string, string>)["content-type"]).toBe(
      "image/x-portable-pixmap",
    );
  });

  it("turns an error status into a ServiceError carrying the server's code", async () => {
    const stub = stubService({
      predict: { kind: "error", status: 400, code: "decode_error", message: "bad bytes" },
    });
    const api = new ApiClient(stub.fetch);
    const error = await api.predict(PPM, "image/png").catch((e) => e);
    expect(error).toBeInstanceOf(ServiceError);
    expect(error.status).toBe(400);
    expect(error.code).toBe("decode_error");
    expect(error.message).toBe("bad bytes");
  });

  it("wraps a failed fetch in NetworkError", async () => {
    const stub = stubService({ predict: { kind: "network" } });
    const api = new ApiClient(stub.fetch);
    await expect(api.predict(PPM, "image/png")).rejects.toBeInstanceOf(NetworkError);
  });
});

describe("ApiClient.diseaseInfo", () => {
  it("returns the entry for a known label", async () => {
    const api = new ApiClient(stubService().fetch);
    const info = await api.diseaseInfo("brown_spot");
    expect(info?.display_name).toBe("Brown Spot");
  });

  it("returns null on 404", async () => {
    const api = new ApiClient(stubService().fetch);
    expect(await api.diseaseInfo("nope")).toBeNull();
  });
});

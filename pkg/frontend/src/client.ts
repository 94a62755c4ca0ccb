// Thin typed client over the service HTTP API. The fetch implementation is
// injectable so tests can run against a recorder instead of a server.

import {
  GenerateOptions,
  GenerateResponse,
  HealthResponse,
  LayoutJson,
  LayoutList,
  StoredLayout,
  SynthesizeRequest,
  SynthesizeResponse,
  TypesResponse,
  validateLayout,
} from "./schema.js";

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
    this.name = "ServiceError";
  }
}

/** Thrown before any request is made; the body never leaves the client. */
export class ClientValidationError extends Error {
  constructor(readonly problems: string[]) {
    super(problems.join("; "));
    this.name = "ClientValidationError";
  }
}

/** The surface the editor depends on; mock this in tests. */
export interface LayoutService {
  health(): Promise<HealthResponse>;
  types(): Promise<TypesResponse>;
  generate(layout: LayoutJson, options?: GenerateOptions): Promise<GenerateResponse>;
  synthesize(request: SynthesizeRequest): Promise<SynthesizeResponse>;
  getLayout(id: string): Promise<StoredLayout>;
  putLayout(id: string, layout: LayoutJson, version?: number): Promise<StoredLayout>;
  deleteLayout(id: string): Promise<void>;
  listLayouts(offset?: number, limit?: number): Promise<LayoutList>;
}

export interface ClientOptions {
  baseUrl?: string;
  fetchFn?: typeof fetch;
}

export class SynclayClient implements LayoutService {
  private readonly baseUrl: string;
  private readonly fetchFn: typeof fetch;

  constructor(options: ClientOptions = {}) {
    this.baseUrl = (options.baseUrl ?? "").replace(/\/$/, "");
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}/api/v1${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let detail: unknown = response.statusText;
      try {
        detail = ((await response.json()) as { detail?: unknown }).detail ?? detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ServiceError(response.status, detail);
    }
    if (response.status === 204) {
      return undefined as T;
    }
    return (await response.json()) as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/health");
  }

  types(): Promise<TypesResponse> {
    return this.request("GET", "/types");
  }

  generate(layout: LayoutJson, options?: GenerateOptions): Promise<GenerateResponse> {
    const problems = validateLayout(layout);
    if (problems.length > 0) {
      return Promise.reject(new ClientValidationError(problems));
    }
    return this.request("POST", "/generate", { layout, options });
  }

  synthesize(request: SynthesizeRequest): Promise<SynthesizeResponse> {
    return this.request("POST", "/layouts/synthesize", request);
  }

  getLayout(id: string): Promise<StoredLayout> {
    return this.request("GET", `/layouts/${encodeURIComponent(id)}`);
  }

  putLayout(id: string, layout: LayoutJson, version?: number): Promise<StoredLayout> {
    const problems = validateLayout(layout);
    if (problems.length > 0) {
      return Promise.reject(new ClientValidationError(problems));
    }
    return this.request("PUT", `/layouts/${encodeURIComponent(id)}`, { layout, version });
  }

  deleteLayout(id: string): Promise<void> {
    return this.request("DELETE", `/layouts/${encodeURIComponent(id)}`);
  }

  listLayouts(offset = 0, limit = 50): Promise<LayoutList> {
    return this.request("GET", `/layouts?offset=${offset}&limit=${limit}`);
  }
}

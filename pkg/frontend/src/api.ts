import {
  API_SCHEMA,
  AssignmentEntries,
  ClassInfo,
  PutAssignmentResult,
  StatsResponse,
  StyleInfo,
} from "./types.js";

function checkSchema(body: { schema?: number }, what: string): void {
  if (body.schema !== API_SCHEMA) {
    throw new Error(`${what}: unsupported schema ${body.schema} (want ${API_SCHEMA})`);
  }
}

/** Thin typed client over the steering endpoints. */
export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private async getJson(path: string): Promise<any> {
    const response = await fetch(this.baseUrl + path);
    if (!response.ok) {
      throw new Error(`GET ${path} failed: ${response.status}`);
    }
    return response.json();
  }

  async classes(): Promise<ClassInfo[]> {
    const body = await this.getJson("/api/classes");
    checkSchema(body, "/api/classes");
    return body.classes;
  }

  async styles(): Promise<StyleInfo[]> {
    const body = await this.getJson("/api/styles");
    checkSchema(body, "/api/styles");
    return body.styles;
  }

  async assignment(): Promise<AssignmentEntries> {
    const body = await this.getJson("/api/assignment");
    checkSchema(body, "/api/assignment");
    return body.entries;
  }

  async stats(): Promise<StatsResponse> {
    const body = await this.getJson("/api/stats");
    checkSchema(body, "/api/stats");
    return body;
  }

  /** Full-replacement PUT; resolves with ok=false (never throws) on 422. */
  async putAssignment(entries: AssignmentEntries): Promise<PutAssignmentResult> {
    const response = await fetch(this.baseUrl + "/api/assignment", {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ schema: API_SCHEMA, entries }),
    });
    const body = await response.json();
    if (response.ok) {
      return { ok: true, entries: body.entries };
    }
    return {
      ok: false,
      status: response.status,
      detail: body.detail ?? `PUT failed: ${response.status}`,
      offending: body.offending,
    };
  }
}

/** Typed client for the inspection service HTTP API. */

export interface DatasetInfo {
  dataset_id: string;
  name: string;
}

export interface Manifest {
  datasets: DatasetInfo[];
  num_prototypes: number;
  num_patches: number;
  threshold: number;
  min_occurrences: number;
  mode: string;
  formats: Record<string, string>;
}

export interface Thumbnail {
  dataset_id: string;
  image_id: string;
  image_url: string;
}

export interface PrototypeStats {
  prototype_id: number;
  counts: Record<string, number>;
  proportions: Record<string, number>;
  label: string | null;
  class_proportion: number | null;
  total_occurrences: number;
  top_cooccurring?: [number, number][];
  thumbnail?: Thumbnail | null;
  examples?: Record<string, string[]>;
}

export interface PrototypeList {
  total: number;
  offset: number;
  limit: number;
  items: PrototypeStats[];
}

export interface ExampleItem {
  image_id: string;
  dataset_id: string;
  positions: number[];
  count: number;
  affinity: number | null;
  image_url: string;
  attention_url: string;
}

export interface Examples {
  prototype_id: number;
  rank: string;
  items: ExampleItem[];
}

export interface ReportCounts {
  specific?: Record<string, number>;
  shared?: number;
  "insufficient-data": number;
  unused: number;
}

export interface Report {
  format: string;
  mode: string;
  datasets: string[];
  num_prototypes: number;
  threshold: number;
  min_occurrences: number;
  diversity: number;
  counts: ReportCounts;
  prototypes: PrototypeStats[];
  metadata: Record<string, unknown>;
}

/** Only user-touched values are serialized, in a fixed parameter order. */
export interface GridFilters {
  label?: string;
  token_kind?: string;
  min_occurrences?: number;
  sort?: string;
  offset?: number;
  limit?: number;
  threshold?: number;
}

const FILTER_ORDER: (keyof GridFilters)[] = [
  "label", "token_kind", "min_occurrences", "sort", "offset", "limit", "threshold",
];

export function prototypesQuery(filters: GridFilters): string {
  const parts: string[] = [];
  for (const key of FILTER_ORDER) {
    const value = filters[key];
    if (value !== undefined) {
      parts.push(`${key}=${encodeURIComponent(String(value))}`);
    }
  }
  return parts.length ? `?${parts.join("&")}` : "";
}

export interface ExampleParams {
  dataset?: string;
  k?: number;
  rank?: string;
}

export function examplesQuery(params: ExampleParams): string {
  const parts: string[] = [];
  if (params.dataset !== undefined) parts.push(`dataset=${encodeURIComponent(params.dataset)}`);
  parts.push(`k=${params.k ?? 12}`);
  if (params.rank !== undefined && params.rank !== "count") parts.push(`rank=${params.rank}`);
  return `?${parts.join("&")}`;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async getJson<T>(path: string, signal?: AbortSignal): Promise<T> {
    const response = await this.fetchFn(this.base + path, { signal });
    if (!response.ok) {
      throw new Error(`GET ${path} failed: ${response.status}`);
    }
    return (await response.json()) as T;
  }

  getManifest(signal?: AbortSignal): Promise<Manifest> {
    return this.getJson("/api/manifest", signal);
  }

  getPrototypes(filters: GridFilters, signal?: AbortSignal): Promise<PrototypeList> {
    return this.getJson(`/api/prototypes${prototypesQuery(filters)}`, signal);
  }

  getPrototype(id: number, threshold?: number, signal?: AbortSignal): Promise<PrototypeStats> {
    const suffix = threshold !== undefined ? `?threshold=${threshold}` : "";
    return this.getJson(`/api/prototypes/${id}${suffix}`, signal);
  }

  getExamples(id: number, params: ExampleParams, signal?: AbortSignal): Promise<Examples> {
    return this.getJson(`/api/prototypes/${id}/examples${examplesQuery(params)}`, signal);
  }

  getReport(signal?: AbortSignal): Promise<Report> {
    return this.getJson("/api/report", signal);
  }
}

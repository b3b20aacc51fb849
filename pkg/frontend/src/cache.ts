/** small FIFO cache for rendered frames, keyed by the request body */
export class FrameCache {
  private map = new Map<string, Blob>();

  constructor(private limit = 64) {}

  get(key: string): Blob | undefined {
    return this.map.get(key);
  }

  put(key: string, blob: Blob) {
    if (this.map.has(key)) this.map.delete(key);
    this.map.set(key, blob);
    if (this.map.size > this.limit) {
      const oldest = this.map.keys().next().value;
      if (oldest !== undefined) this.map.delete(oldest);
    }
  }

  get size(): number {
    return this.map.size;
  }
}

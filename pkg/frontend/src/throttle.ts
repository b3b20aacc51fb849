/**
 * Rate gate for a continuous event stream: at most one call per `ms`
 * window, latest value wins.
 *
 * The first event fires immediately; events arriving inside an open
 * window are coalesced and the newest one fires when the window closes,
 * which keeps a drag gesture updating continuously instead of waiting
 * for the user to pause.
 */
export class Throttle<T> {
  private timer: ReturnType<typeof setTimeout> | undefined;
  private latest: T | undefined;
  private pending = false;

  constructor(private fn: (value: T) => void, private ms = 100) {}

  call(value: T) {
    this.latest = value;
    if (this.timer !== undefined) {
      this.pending = true;
      return;
    }
    this.fn(value);
    this.open();
  }

  private open() {
    this.timer = setTimeout(() => {
      this.timer = undefined;
      if (this.pending) {
        this.pending = false;
        this.fn(this.latest as T);
        this.open();
      }
    }, this.ms);
  }

  cancel() {
    if (this.timer !== undefined) clearTimeout(this.timer);
    this.timer = undefined;
    this.pending = false;
  }
}

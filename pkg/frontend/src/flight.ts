/** Debounce plus single-in-flight request management. */

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
  timers: { set: typeof setTimeout; clear: typeof clearTimeout } = {
    set: setTimeout,
    clear: clearTimeout,
  },
): (...args: A) => void {
  let handle: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (handle !== null) {
      timers.clear(handle);
    }
    handle = timers.set(() => {
      handle = null;
      fn(...args);
    }, waitMs);
  };
}

/**
 * Keeps at most one request running: starting a new one aborts the
 * previous. Aborted runs resolve to null.
 */
export class SingleFlight {
  private controller: AbortController | null = null;

  async run<T>(task: (signal: AbortSignal) => Promise<T>): Promise<T | null> {
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    try {
      const result = await task(controller.signal);
      // a superseded run must never deliver its (stale) result
      return controller.signal.aborted ? null : result;
    } catch (err) {
      if (controller.signal.aborted) {
        return null;
      }
      throw err;
    } finally {
      if (this.controller === controller) {
        this.controller = null;
      }
    }
  }

  get busy(): boolean {
    return this.controller !== null;
  }
}

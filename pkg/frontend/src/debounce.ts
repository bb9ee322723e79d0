/** Last-write-wins debouncer: rapid calls collapse into one trailing
 * invocation with the most recent argument. */

export interface Scheduler {
  set(fn: () => void, ms: number): unknown;
  clear(handle: unknown): void;
}

const defaultScheduler: Scheduler = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (h) => clearTimeout(h as ReturnType<typeof setTimeout>),
};

export function debounce<A>(
  fn: (arg: A) => void,
  ms: number,
  scheduler: Scheduler = defaultScheduler,
): (arg: A) => void {
  let handle: unknown = null;
  return (arg: A) => {
    if (handle !== null) scheduler.clear(handle);
    handle = scheduler.set(() => {
      handle = null;
      fn(arg);
    }, ms);
  };
}

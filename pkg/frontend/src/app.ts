// Wires the client, badge and review screen together against a running
// service. Node entry point; a browser build would swap connectTcp for
// a WebSocket transport.

import {
  badgeConnected,
  badgeDisconnected,
  badgeOnLifecycle,
  badgeOnVerdict,
  initialBadge,
  type BadgeState,
} from "./badge.js";
import { connectTcp, EventStream, ServiceClient } from "./client.js";
import { renderBadge, renderReview } from "./dom.js";
import { ReviewViewModel } from "./review.js";

export interface AppOptions {
  host: string;
  controlPort: number;
  badgeRoot: HTMLElement;
  reviewRoot: HTMLElement;
}

export async function runApp(options: AppOptions): Promise<void> {
  const control = new ServiceClient(await connectTcp(options.host, options.controlPort));
  let badge: BadgeState = badgeConnected(initialBadge());
  renderBadge(options.badgeRoot, badge);

  const update = (next: BadgeState) => {
    badge = next;
    renderBadge(options.badgeRoot, badge);
  };

  new EventStream(await connectTcp(options.host, options.controlPort + 1), {
    onVerdict: (event) => update(badgeOnVerdict(badge, event)),
    onLifecycle: async (event) => {
      update(badgeOnLifecycle(badge, event));
      if (event.state === "review") {
        const bundle = await control.reviewGet();
        const vm = new ReviewViewModel(bundle);
        renderReview(options.reviewRoot, vm, {
          onSubmit: async (model) => {
            const { edits, journal } = model.buildSubmission();
            await control.reviewSubmit(edits, journal);
            options.reviewRoot.innerHTML = "<p>review saved</p>";
          },
        });
      }
    },
    onDisconnect: () => update(badgeDisconnected()),
  });
}

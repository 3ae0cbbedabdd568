"""Plain-text counter dump over HTTP GET /metrics."""

import logging

from aiohttp import web

from ..core.metrics import Counters

logger = logging.getLogger(__name__)

COUNTERS_KEY = web.AppKey("counters", Counters)


async def handle_metrics(request: web.Request) -> web.Response:
    counters = request.app[COUNTERS_KEY]
    return web.Response(text=counters.render(), content_type="text/plain")


def metrics_app(counters: Counters) -> web.Application:
    app = web.Application()
    app[COUNTERS_KEY] = counters
    app.router.add_get("/metrics", handle_metrics)
    return app


async def start_metrics_server(
    counters: Counters, host: str = "127.0.0.1", port: int = 9153
) -> web.AppRunner:
    """Serve /metrics in the running loop; call `cleanup()` on the runner to stop."""
    runner = web.AppRunner(metrics_app(counters), access_log=None)
    await runner.setup()
    site = web.TCPSite(runner, host, port)
    await site.start()
    logger.info("metrics available at http://%s:%d/metrics", host, port)
    return runner

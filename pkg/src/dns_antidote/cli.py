"""Command line interface for the DNS antidote toolkit."""

import random
import sys
from pathlib import Path
from typing import Annotated

import typer

from .core import ConfigManager
from .core.entropy import (
    EntropyConfig,
    entropy_budget,
    monte_carlo_spoof_success,
    spoof_success_probability,
)
from .core.exceptions import AntidoteError, BindError, ConfigurationError
from .core.wire import DnsName
from .gateway import serve as serve_gateway
from .sim import kaminsky_query_name, run_experiment, save_results, write_results
from .sim.experiment import ExperimentConfig, address_pool
from .utils.log import DEFAULT_FORMAT, configure_logging

app = typer.Typer(
    name="dns-antidote",
    help="DNS cache-poisoning defenses: forwarding gateway and attack simulator",
    no_args_is_help=True,
)

ConfigDirOption = Annotated[
    Path, typer.Option("--config-dir", help="Directory with settings.toml")
]


@app.command()
def serve(
    config: Annotated[
        Path | None, typer.Option("--config", help="Gateway TOML file")
    ] = None,
    listen: Annotated[
        str | None, typer.Option("--listen", help="ADDR:PORT to answer clients on")
    ] = None,
    upstream: Annotated[
        list[str] | None,
        typer.Option("--upstream", help="ADDR:PORT to forward to (repeatable)"),
    ] = None,
    seed: Annotated[
        int | None, typer.Option("--seed", help="Deterministic randomness (testing)")
    ] = None,
    log_level: Annotated[str | None, typer.Option("--log-level")] = None,
    metrics_port: Annotated[
        int | None, typer.Option("--metrics-port", help="Serve GET /metrics here")
    ] = None,
    config_dir: ConfigDirOption = Path("config"),
) -> None:
    """Run the forwarding gateway until interrupted."""
    manager = ConfigManager(config_dir)
    try:
        _, fmt = manager.logging_settings()
        gateway_config = manager.load_gateway_config(config).with_overrides(
            listen=listen,
            upstreams=upstream,
            seed=seed,
            log_level=log_level,
            metrics_port=metrics_port,
        )
        configure_logging(log_level or gateway_config.log_level, fmt or DEFAULT_FORMAT)
        gateway_config.validate()
        serve_gateway(gateway_config)
    except ConfigurationError as e:
        typer.echo(f"Configuration error: {e}", err=True)
        raise typer.Exit(2) from None
    except BindError as e:
        typer.echo(f"Bind error: {e}", err=True)
        raise typer.Exit(1) from None
    except AntidoteError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(1) from None


@app.command()
def simulate(
    config: Annotated[
        Path | None,
        typer.Option("--config", help="Experiment file ('antidote-sim v1' header)"),
    ] = None,
    trials: Annotated[int | None, typer.Option("--trials", min=1)] = None,
    seed: Annotated[int | None, typer.Option("--seed")] = None,
    workers: Annotated[int | None, typer.Option("--workers", min=1)] = None,
    output: Annotated[
        Path | None, typer.Option("--output", "-o", help="CSV file; stdout if omitted")
    ] = None,
    config_dir: ConfigDirOption = Path("config"),
) -> None:
    """Run a defense x attacker grid and print the result table."""
    manager = ConfigManager(config_dir)
    try:
        level, fmt = manager.logging_settings()
        configure_logging(level, fmt or DEFAULT_FORMAT)
        data = dict(manager.load_experiment_file(config))
        for key, value in (("trials", trials), ("seed", seed), ("workers", workers)):
            if value is not None:
                data[key] = value
        experiment = ExperimentConfig.from_mapping(data)
        rows = run_experiment(experiment)
    except AntidoteError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(1) from None

    if output is None:
        write_results(rows, sys.stdout)
    else:
        save_results(rows, output)
        typer.echo(f"Wrote {len(rows)} rows to {output}")


@app.command()
def budget(
    name: Annotated[str, typer.Argument(help="Query name, e.g. www.google.com")],
    txid: Annotated[bool, typer.Option("--txid/--no-txid")] = True,
    txid_bits: Annotated[int, typer.Option("--txid-bits", min=0, max=16)] = 16,
    spr: Annotated[bool, typer.Option("--spr/--no-spr")] = True,
    port_low: Annotated[int, typer.Option("--port-low")] = 1024,
    port_high: Annotated[int, typer.Option("--port-high")] = 65535,
    pool_size: Annotated[int, typer.Option("--pool-size", min=1)] = 1,
    dst_size: Annotated[int, typer.Option("--dst-size", min=1)] = 1,
    encode_0x20: Annotated[bool, typer.Option("--0x20/--no-0x20")] = True,
    extend: Annotated[bool, typer.Option("--extend/--no-extend")] = False,
    spoofed: Annotated[
        int | None, typer.Option("--spoofed", help="Print P(success) for N packets")
    ] = None,
) -> None:
    """Print the entropy budget of a query name under a defense setup."""
    try:
        cfg = EntropyConfig(
            randomize_txid=txid,
            txid_bits=txid_bits,
            spr_enabled=spr,
            port_range=(port_low, port_high),
            ip_pool=address_pool(pool_size),
            dst_ip_candidates=address_pool(dst_size, "192.0.2.0/24"),
            encode_0x20=encode_0x20,
            short_query_extension=extend,
        )
        result = entropy_budget(cfg, DnsName.from_text(name))
    except AntidoteError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(1) from None

    typer.echo(f"txid     {result.txid_bits:8.3f}")
    typer.echo(f"port     {result.port_bits:8.3f}")
    typer.echo(f"src_ip   {result.src_ip_bits:8.3f}")
    typer.echo(f"dst_ip   {result.dst_ip_bits:8.3f}")
    typer.echo(f"case     {result.case_bits:8.3f}")
    typer.echo(f"total    {result.total_bits:8.3f}")
    if spoofed is not None:
        probability = spoof_success_probability(result.total_bits, spoofed)
        typer.echo(f"P(success, n={spoofed}) = {probability:.6g}")


@app.command()
def probability(
    bits: Annotated[float, typer.Argument(help="Entropy bits per forged packet")],
    spoofed: Annotated[int, typer.Argument(help="Forged packets per window")],
    trials: Annotated[
        int, typer.Option("--monte-carlo", help="Sampling trials; 0 to skip")
    ] = 0,
    seed: Annotated[int, typer.Option("--seed")] = 0,
) -> None:
    """Chance that one of N forged packets guesses a BITS-bit secret."""
    try:
        exact = spoof_success_probability(bits, spoofed)
        typer.echo(f"analytic     {exact:.6g}")
        if trials:
            sampled = monte_carlo_spoof_success(bits, spoofed, trials, seed)
            typer.echo(f"monte-carlo  {sampled:.6g}  ({trials} trials)")
    except AntidoteError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(1) from None


@app.command("kaminsky-name")
def kaminsky_name(
    zone: Annotated[str, typer.Argument(help="Target zone, e.g. google.com")],
    seed: Annotated[int | None, typer.Option("--seed")] = None,
    digits: Annotated[int, typer.Option("--digits", min=1, max=63)] = 8,
) -> None:
    """Print a random-digit query name under ZONE."""
    rng = random.Random(seed) if seed is not None else random.SystemRandom()
    try:
        typer.echo(kaminsky_query_name(zone, rng, digits).to_text())
    except AntidoteError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(1) from None


def main() -> None:
    """Main entry point for the CLI."""
    app()


if __name__ == "__main__":
    main()

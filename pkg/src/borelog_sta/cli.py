"""Command line front end.

Four subcommands: serve (run the HTTP server over a journal-backed store),
load (push a batch document, either to a running server or straight into a
journal), import-ags (translate an AGS-style file to a batch document) and
log (render a borehole log as text or CSV).

Exit codes: 0 on success, 1 for usage errors, 2 for data errors (parse
failures, rejected batches, missing entities).
"""

from __future__ import annotations

import json
import sys

import click

from . import security
from .agslite import AgsError, import_ags_lite
from .borelog import (
    ClientError,
    EmbeddedClient,
    HttpClient,
    render_borehole_csv,
    render_borehole_log,
)
from .store import BatchError, Conflict, NotFound, Store, ValidationFailed


def _open_store(journal: str) -> Store:
    store = Store(journal_path=journal)
    store.bootstrap("admin", "admin")
    return store


def _embedded_principal(store: Store, user: str, password: str):
    try:
        return security.authenticate(store.graph, user, password)
    except security.Unauthorized:
        raise click.ClickException(f"authentication failed for {user!r}")


def _make_client(endpoint, journal, user, password):
    if endpoint and journal:
        raise click.UsageError("choose one of --endpoint or --journal")
    if endpoint:
        auth = (user, password) if user else None
        return HttpClient(endpoint, auth=auth)
    if journal:
        store = _open_store(journal)
        if user:
            principal = _embedded_principal(store, user, password or "")
        else:
            principal = security.ANONYMOUS
        return EmbeddedClient(store, principal)
    raise click.UsageError("one of --endpoint or --journal is required")


@click.group()
def cli():
    """Borehole observation server tools."""


@cli.command()
@click.option("--bind", default="127.0.0.1:8080", show_default=True,
              help="host:port to listen on.")
@click.option("--journal", required=True, type=click.Path(),
              help="Journal file backing the store.")
@click.option("--admin-user", default="admin", show_default=True)
@click.option("--admin-pass", default="admin", show_default=True)
def serve(bind, journal, admin_user, admin_pass):
    """Run the HTTP server."""
    import uvicorn

    from .service import create_app

    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise click.UsageError("--bind must look like host:port")
    store = Store(journal_path=journal)
    store.bootstrap(admin_user, admin_pass)
    uvicorn.run(create_app(store), host=host, port=int(port), log_level="warning")


@cli.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--endpoint", help="Server base URL, e.g. http://127.0.0.1:8080")
@click.option("--journal", type=click.Path(), help="Load directly into this journal.")
@click.option("--user", default="admin", show_default=True)
@click.option("--password", default="admin", show_default=True)
def load(file, endpoint, journal, user, password):
    """Load a batch document into the store."""
    try:
        with open(file, encoding="utf-8") as handle:
            document = json.load(handle)
    except json.JSONDecodeError as exc:
        raise click.ClickException(f"{file}: not valid JSON ({exc})")
    items = document.get("batch")
    if not isinstance(items, list):
        raise click.ClickException(f"{file}: expected an object with a 'batch' list")

    if endpoint and journal:
        raise click.UsageError("choose one of --endpoint or --journal")
    if endpoint:
        client = HttpClient(endpoint, auth=(user, password))
        try:
            created = client.post_batch(document)
        except ClientError as exc:
            raise click.ClickException(f"batch rejected: {exc.message}")
        finally:
            client.close()
    elif journal:
        store = _open_store(journal)
        principal = _embedded_principal(store, user, password)
        try:
            created = store.batch_create(items, principal=principal)
        except BatchError as exc:
            raise click.ClickException(f"batch rejected: {exc}")
    else:
        raise click.UsageError("one of --endpoint or --journal is required")

    for key in sorted(created):
        click.echo(f"{key} = {created[key]}")
    click.echo(f"created {len(created)} entities")


@cli.command("import-ags")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(),
              help="Where to write the batch document.")
@click.option("--mapping", type=click.Path(exists=True, dir_okay=False),
              help="Mapping configuration (defaults to the built-in one).")
def import_ags(file, output, mapping):
    """Translate an AGS-style file into a batch document."""
    warnings = []
    try:
        document = import_ags_lite(file, mapping_path=mapping,
                                   on_warning=warnings.append)
    except AgsError as exc:
        raise click.ClickException(str(exc))
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)
    with open(output, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=2)
        handle.write("\n")
    click.echo(f"wrote {len(document['batch'])} batch items to {output}")


@cli.command()
@click.argument("collar_id")
@click.option("--csv", "as_csv", is_flag=True, help="Emit CSV instead of text.")
@click.option("--endpoint", help="Server base URL.")
@click.option("--journal", type=click.Path(), help="Read from this journal.")
@click.option("--user", default=None)
@click.option("--password", default=None)
def log(collar_id, as_csv, endpoint, journal, user, password):
    """Render the borehole log for one collar."""
    client = _make_client(endpoint, journal, user, password)
    try:
        identifier = _resolve_collar(client, collar_id)
        render = render_borehole_csv if as_csv else render_borehole_log
        click.echo(render(client, identifier), nl=False)
    except ClientError as exc:
        raise click.ClickException(exc.message)
    finally:
        client.close()


def _resolve_collar(client, collar_id):
    if collar_id.lstrip("-").isdigit():
        return int(collar_id)
    quoted = collar_id.replace("'", "''")
    matches = client.get(f"BhCollarThings?$filter=name eq '{quoted}'").get("value", [])
    if not matches:
        raise ClientError(404, f"no collar named {collar_id!r}")
    return matches[0]["@iot.id"]


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2
    except (ValidationFailed, Conflict, NotFound, AgsError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

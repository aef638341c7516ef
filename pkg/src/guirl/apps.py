"""Built-in synthetic applications.

``settings`` mimics a system-settings app: a home grid of categories, one
page per category, and sub-pages below those. ``browser`` mimics a web
browser with tabs, links and an overflow menu. Both are wrapped in a desktop
with a taskbar owned by a different process, so the process filter has
something to remove.
"""

from __future__ import annotations

import random
from typing import Optional, Sequence

from .env import AppSpec
from .uitree import LEFT_CLICK, UINode, UITree, desktop_node

NOTIFICATIONS_EVENT = "notifications_panel_opened"
BLUETOOTH_EVENT = "add_bluetooth_clicked"
FAVORITE_EVENT = "favorite_added"

SETTINGS_PROCESS = "SystemSettings"
BROWSER_PROCESS = "msedge"
SHELL = "explorer"

PERTURBATION_SEEDS = {"settings": 7411, "browser": 9203}


def node(cls: str, ctype: str, process: str, aid: Optional[str] = None, *children: UINode) -> UINode:
    return UINode(cls, ctype, process, aid, tuple(children))


def _taskbar() -> UINode:
    return node("Shell_TrayWnd", "Pane", SHELL, None,
                node("Start", "Button", SHELL, "StartButton"),
                node("TrayButton", "Button", SHELL, "TaskViewButton"),
                node("TrayClockWClass", "Text", SHELL, "SystemTrayClock"))


def _desktop(window: UINode) -> UITree:
    return UITree(desktop_node([_taskbar(), window]))


class _Builder:
    """Collects screens and the (screen, node, LeftClick) wiring between them."""

    def __init__(self, process: str):
        self.process = process
        self.screens: dict[str, UITree] = {}
        self.transitions = {}
        self.events = {}

    def n(self, cls, ctype, aid=None, *children):
        return node(cls, ctype, self.process, aid, *children)

    def add(self, sid: str, window: UINode) -> None:
        self.screens[sid] = _desktop(window)

    def link(self, sid: str, target: UINode, dest: str) -> None:
        self.transitions[(sid, target.identifier, LEFT_CLICK)] = dest

    def fire(self, sid: str, target: UINode, event: str) -> None:
        self.events[(sid, target.identifier, LEFT_CLICK)] = event

    def spec(self, name: str, initial: str, perturbation_seed=None) -> AppSpec:
        return AppSpec(name=name, screens=self.screens, transitions=self.transitions,
                       events=self.events, initial_screen=initial, process=self.process,
                       perturbation_seed=perturbation_seed)


# ----------------------------------------------------------------- settings

SETTINGS_CATEGORIES = {
    "System": ["Display", "Sound", "Notifications", "FocusAssist", "Power", "Storage"],
    "Devices": ["Bluetooth", "Printers", "Mouse", "Typing", "Pen", "AutoPlay"],
    "Phone": ["YourPhone", "Link", "Texts", "Photos", "Calls", "Apps"],
    "Network": ["Status", "WiFi", "Ethernet", "VPN", "Proxy", "Airplane"],
    "Personalization": ["Background", "Colors", "LockScreen", "Themes", "Fonts", "Start"],
    "Apps": ["AppsFeatures", "DefaultApps", "OfflineMaps", "Startup", "VideoPlayback", "Websites"],
    "Accounts": ["YourInfo", "Email", "SignIn", "Family", "Sync", "Work"],
    "Time": ["DateTime", "Region", "Language", "Speech", "Keyboard", "Clock"],
    "Privacy": ["General", "Location", "Camera", "Microphone", "Voice", "History"],
}
_SETTINGS_HOME_EXTRAS = ["GetHelp", "GiveFeedback", "WindowsUpdate", "OneDrive", "Rewards",
                         "WebBrowsing", "Profile", "Tips", "Search", "Recent", "Restore",
                         "LearnMore"]


def _settings_title_bar(b: _Builder) -> tuple[UINode, UINode]:
    back = b.n("Button", "Button", "BackButton")
    bar = b.n("TitleBar", "Pane", "TitleBar",
              back,
              b.n("Button", "Button", "Minimize"),
              b.n("Button", "Button", "Maximize"),
              b.n("TextBlock", "Text", "AppTitle"))
    return bar, back


def _settings_tile(b: _Builder, cat: str) -> UINode:
    return b.n("ListViewItem", "ListItem", f"SettingsPageGroup{cat}",
               b.n(f"Glyph{cat}", "Image", None),
               b.n("TextBlock", "Text", None))


def build_settings(perturbation_seed: Optional[int] = None, name: str = "settings") -> AppSpec:
    """Settings app: 1 home screen, 9 category pages, 54 sub-pages.

    The notifications task is home -> System -> Notifications; the Bluetooth
    task is home -> Devices -> "Add Bluetooth or other device".
    """
    b = _Builder(SETTINGS_PROCESS)
    cats = list(SETTINGS_CATEGORIES)

    # home
    bar, _ = _settings_title_bar(b)
    tiles = {c: _settings_tile(b, c) for c in cats}
    extras = [b.n("Hyperlink", "Hyperlink", f"Home{x}") for x in _SETTINGS_HOME_EXTRAS[:6]]
    extras += [b.n("Button", "Button", f"Home{x}") for x in _SETTINGS_HOME_EXTRAS[6:]]
    home = b.n("ApplicationFrameWindow", "Window", "SettingsWindow",
               bar,
               b.n("HomeHeader", "Pane", "PageHeader",
                   b.n("TextBlock", "Text", "PageTitle"),
                   b.n("TextBox", "Edit", "SearchBox"),
                   *extras[6:9]),
               b.n("GridView", "List", "CategoryGrid", *tiles.values()),
               b.n("HomeFooter", "Pane", "Footer", *extras[:6], *extras[9:]))
    b.add("home", home)
    for c in cats:
        b.link("home", tiles[c], f"cat/{c}")

    # category pages
    for c in cats:
        bar, back = _settings_title_bar(b)
        subs = SETTINGS_CATEGORIES[c]
        nav = {s: b.n("NavigationViewItem", "ListItem", f"{c}_{s}",
                      b.n(f"Glyph{s}", "Image", None)) for s in subs}
        related = [b.n("Hyperlink", "Hyperlink", f"{c}Related{k}") for k in range(3)]
        primary = b.n("Button", "Button", f"{c}PrimaryAction", b.n(f"Glyph{c}Action", "Image", None))
        window = b.n("ApplicationFrameWindow", "Window", "SettingsWindow",
                     bar,
                     b.n("NavigationView", "List", "Nav", *nav.values()),
                     b.n("ScrollViewer", "Pane", "Content",
                         b.n("TextBlock", "Text", "PageTitle"),
                         b.n(f"{c}Panel", "Pane", None, primary),
                         b.n("RelatedSettings", "Group", None, *related)))
        sid = f"cat/{c}"
        b.add(sid, window)
        b.link(sid, back, "home")
        for r in related:
            b.link(sid, r, "home")
        for s in subs:
            b.link(sid, nav[s], f"sub/{c}/{s}")
        if c == "System":
            b.fire(sid, nav["Notifications"], NOTIFICATIONS_EVENT)
        if c == "Devices":
            primary = b.n("Button", "Button", "DevicesPrimaryAction", b.n("GlyphDevicesAction", "Image", None))
            b.fire(sid, primary, BLUETOOTH_EVENT)
            b.link(sid, primary, "dialog/AddDevice")

    # sub-pages
    for c in cats:
        for s in SETTINGS_CATEGORIES[c]:
            bar, back = _settings_title_bar(b)
            toggles = [b.n("ToggleSwitch", "Button", f"{s}Toggle")]
            home_link = b.n("Hyperlink", "Hyperlink", "HomeLink")
            window = b.n("ApplicationFrameWindow", "Window", "SettingsWindow",
                         bar,
                         b.n("ScrollViewer", "Pane", "Content",
                             b.n("TextBlock", "Text", "PageTitle"),
                             b.n(f"{s}Page", "Pane", None, *toggles),
                             home_link))
            sid = f"sub/{c}/{s}"
            b.add(sid, window)
            b.link(sid, back, f"cat/{c}")
            b.link(sid, home_link, "home")

    # add-device dialog
    cancel = b.n("Button", "Button", "CancelButton")
    dialog = b.n("Popup", "Window", "AddDeviceDialog",
                 b.n("TextBlock", "Text", "DialogTitle"),
                 b.n("Button", "ListItem", "AddBluetooth"),
                 b.n("Button", "ListItem", "AddDisplay"),
                 b.n("Button", "ListItem", "AddOther"),
                 cancel)
    b.add("dialog/AddDevice", dialog)
    b.link("dialog/AddDevice", cancel, "cat/Devices")
    return b.spec(name, "home", perturbation_seed)


# ------------------------------------------------------------------ browser

_TABS = ["News", "Mail", "Docs", "Shop"]
_LINKS = [f"Link{k}" for k in range(8)]
_MENU_ITEMS = ["NewTab", "NewWindow", "InPrivate", "Zoom", "Favorites", "Collections",
               "History", "Downloads", "Apps", "Extensions", "Print", "Capture", "Find",
               "ReadAloud", "MoreTools", "Settings", "Help", "Close"]


def _browser_window(b: _Builder, content: UINode, menu: Optional[UINode] = None):
    """Browser chrome around ``content``; returns (window, named controls)."""
    ctl = {
        "back": b.n("Button", "Button", "BackButton"),
        "forward": b.n("Button", "Button", "ForwardButton"),
        "refresh": b.n("Button", "Button", "RefreshButton"),
        "home": b.n("Button", "Button", "HomeButton"),
        "menu": b.n("Button", "Button", "SettingsAndMore", b.n("IconMore", "Image", None)),
    }
    tabs = {t: b.n("TabItem", "TabItem", f"Tab{t}") for t in _TABS}
    parts = [
        b.n("TabStrip", "Tab", "TabStrip", *tabs.values(), b.n("Button", "Button", "NewTabButton")),
        b.n("Toolbar", "ToolBar", "NavBar",
            ctl["back"], ctl["forward"], ctl["refresh"], ctl["home"],
            b.n("OmniboxViewViews", "Edit", "AddressBar"),
            ctl["menu"]),
        content,
    ]
    if menu is not None:
        parts.append(menu)
    window = b.n("Chrome_WidgetWin_1", "Window", "BrowserWindow", *parts)
    ctl["tabs"] = tabs
    return window, ctl


def _browser_page(b: _Builder, page: str):
    links = {l: b.n("Hyperlink", "Hyperlink", f"{page}{l}") for l in _LINKS}
    content = b.n("Chrome_RenderWidgetHostHWND", "Document", f"{page}Document",
                  b.n("TextBlock", "Text", None), *links.values())
    return content, links


def build_browser(perturbation_seed: Optional[int] = None, name: str = "browser") -> AppSpec:
    """Browser app: start page, menu overlay, article pages, history and downloads.

    The favorites task is "Settings and more" -> "Add this page to favorites".
    """
    b = _Builder(BROWSER_PROCESS)

    def wire_chrome(sid, ctl, links, page):
        b.link(sid, ctl["menu"], f"menu/{page}")
        b.link(sid, ctl["home"], "start")
        for l, target in links.items():
            b.link(sid, target, f"article/{l}")

    content, links = _browser_page(b, "Start")
    window, ctl = _browser_window(b, content)
    b.add("start", window)
    wire_chrome("start", ctl, links, "start")

    for l in _LINKS:
        content, alinks = _browser_page(b, f"Article{l}")
        window, actl = _browser_window(b, content)
        sid = f"article/{l}"
        b.add(sid, window)
        b.link(sid, actl["back"], "start")
        b.link(sid, actl["home"], "start")
        b.link(sid, actl["menu"], f"menu/{sid}")

    for page in ["start"] + [f"article/{l}" for l in _LINKS]:
        if page == "start":
            content, links = _browser_page(b, "Start")
        else:
            content, links = _browser_page(b, f"Article{page.split('/')[1]}")
        items = {m: b.n("MenuItemView", "MenuItem", f"Menu{m}", b.n(f"Icon{m}", "Image", None))
                 for m in _MENU_ITEMS}
        fav = b.n("MenuItemView", "MenuItem", "MenuAddToFavorites", b.n("IconAddToFavorites", "Image", None))
        menu = b.n("MenuHost", "Menu", "AppMenu", *list(items.values())[:5], fav,
                   *list(items.values())[5:])
        window, mctl = _browser_window(b, content, menu)
        sid = f"menu/{page}"
        b.add(sid, window)
        b.link(sid, mctl["menu"], page)
        for l, target in links.items():
            b.link(sid, target, f"article/{l}")
        b.fire(sid, fav, FAVORITE_EVENT)
        b.link(sid, fav, page)
        b.link(sid, items["History"], "history")
        b.link(sid, items["Downloads"], "downloads")

    for pane in ("history", "downloads"):
        close = b.n("Button", "Button", f"Close{pane.title()}")
        entries = [b.n("ListItem", "ListItem", f"{pane}Entry{k}") for k in range(4)]
        content, links = _browser_page(b, "Start")
        flyout = b.n("Flyout", "Pane", f"{pane.title()}Flyout", *entries, close)
        window, fctl = _browser_window(b, content, flyout)
        b.add(pane, window)
        b.link(pane, close, "start")
    return b.spec(name, "start", perturbation_seed)


def list_builtin_apps() -> list[AppSpec]:
    return [
        build_settings(),
        build_browser(),
        build_settings(PERTURBATION_SEEDS["settings"], name="settings_perturbed"),
        build_browser(PERTURBATION_SEEDS["browser"], name="browser_perturbed"),
    ]


_BUILDERS = {"settings": build_settings, "browser": build_browser}


def get_app(name: str) -> AppSpec:
    """Built-in app by name; ``<name>_perturbed`` selects the perturbed variant."""
    base = name[: -len("_perturbed")] if name.endswith("_perturbed") else name
    if base not in _BUILDERS:
        raise KeyError(f"unknown built-in app {name!r}; choose from "
                       f"{sorted(_BUILDERS) + [k + '_perturbed' for k in sorted(_BUILDERS)]}")
    if base != name:
        return _BUILDERS[base](PERTURBATION_SEEDS[base], name=name)
    return _BUILDERS[base]()


# task name -> (app, event)
BUILTIN_TASKS = {
    "notifications": ("settings", NOTIFICATIONS_EVENT),
    "bluetooth": ("settings", BLUETOOTH_EVENT),
    "favorites": ("browser", FAVORITE_EVENT),
}


_RANDOM_CLASSES = ("Button", "Pane", "TextBlock", "ListViewItem", "Hyperlink", "Group", "MenuItem")
_RANDOM_TYPES = ("Button", "Pane", "Text", "ListItem", "Hyperlink", "Group", "MenuItem", "TabItem")


def random_tree(rng: random.Random, max_nodes: int = 12, processes: Sequence[str] = ("app", SHELL)) -> UITree:
    """Random tree of 1..``max_nodes`` nodes with small property pools.

    Each node hangs off a uniformly chosen earlier node, so depth and
    fan-out vary. Pools are small enough that properties repeat.
    """
    n = rng.randint(1, max_nodes)
    props = []
    parent = [-1]
    for i in range(n):
        aid = None if rng.random() < 0.3 else str(rng.randrange(6))
        props.append((rng.choice(_RANDOM_CLASSES), rng.choice(_RANDOM_TYPES), rng.choice(processes), aid))
        if i:
            parent.append(rng.randrange(i))
    kids: list[list[int]] = [[] for _ in range(n)]
    for i in range(1, n):
        kids[parent[i]].append(i)

    def make(i: int) -> UINode:
        return UINode(*props[i], tuple(make(c) for c in kids[i]))

    return UITree(make(0))
